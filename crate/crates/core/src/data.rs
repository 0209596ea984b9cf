//! Sample moments: covariance matrix, optional means and sample size.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataError {
    #[error("need at least 2 observations, got {0}")]
    TooFewObservations(usize),
    #[error("covariance matrix is {rows}x{cols} but {names} variable names were given")]
    Dimension {
        rows: usize,
        cols: usize,
        names: usize,
    },
    #[error("covariance matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("covariance matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("variable `{0}` not found in data")]
    MissingVariable(String),
    #[error("non-finite value in data")]
    NonFinite,
}

/// Divisor used for the sample covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CovDivisor {
    /// ML convention.
    #[default]
    N,
    NMinusOne,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleMoments {
    cov: DMatrix<f64>,
    means: Option<DVector<f64>>,
    n: usize,
    names: Vec<String>,
    log_det: f64,
}

impl SampleMoments {
    pub fn new(
        cov: DMatrix<f64>,
        means: Option<DVector<f64>>,
        n: usize,
        names: Vec<String>,
    ) -> Result<Self, DataError> {
        if n < 2 {
            return Err(DataError::TooFewObservations(n));
        }
        let p = names.len();
        if cov.nrows() != p || cov.ncols() != p {
            return Err(DataError::Dimension {
                rows: cov.nrows(),
                cols: cov.ncols(),
                names: p,
            });
        }
        if let Some(m) = &means {
            if m.len() != p {
                return Err(DataError::Dimension {
                    rows: m.len(),
                    cols: 1,
                    names: p,
                });
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(DataError::NonFinite);
            }
        }
        if cov.iter().any(|v| !v.is_finite()) {
            return Err(DataError::NonFinite);
        }
        let asym = (&cov - cov.transpose()).amax();
        let scale = cov.amax().max(1.0);
        if asym > 1e-10 * scale {
            return Err(DataError::NotSymmetric(asym));
        }
        let cov = (&cov + cov.transpose()) * 0.5;
        let chol = cov
            .clone()
            .cholesky()
            .ok_or(DataError::NotPositiveDefinite)?;
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        if !log_det.is_finite() {
            return Err(DataError::NotPositiveDefinite);
        }
        Ok(Self {
            cov,
            means,
            n,
            names,
            log_det,
        })
    }

    /// Moments of raw data rows (observations × variables).
    pub fn from_raw(
        rows: &DMatrix<f64>,
        names: Vec<String>,
        divisor: CovDivisor,
    ) -> Result<Self, DataError> {
        let n = rows.nrows();
        if n < 2 {
            return Err(DataError::TooFewObservations(n));
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(DataError::NonFinite);
        }
        let p = rows.ncols();
        let means = DVector::from_iterator(p, (0..p).map(|j| rows.column(j).mean()));
        let mut centered = rows.clone();
        for j in 0..p {
            let mj = means[j];
            centered.column_mut(j).add_scalar_mut(-mj);
        }
        let denom = match divisor {
            CovDivisor::N => n as f64,
            CovDivisor::NMinusOne => (n - 1) as f64,
        };
        let cov = centered.tr_mul(&centered) / denom;
        Self::new(cov, Some(means), n, names)
    }

    /// Subset and reorder to `names`.
    pub fn select(&self, names: &[String]) -> Result<Self, DataError> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| {
                self.names
                    .iter()
                    .position(|m| m == n)
                    .ok_or_else(|| DataError::MissingVariable(n.clone()))
            })
            .collect::<Result<_, _>>()?;
        let k = idx.len();
        let cov = DMatrix::from_fn(k, k, |i, j| self.cov[(idx[i], idx[j])]);
        let means = self
            .means
            .as_ref()
            .map(|m| DVector::from_iterator(k, idx.iter().map(|&i| m[i])));
        Self::new(cov, means, self.n, names.to_vec())
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn means(&self) -> Option<&DVector<f64>> {
        self.means.as_ref()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_vars(&self) -> usize {
        self.names.len()
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }
}
