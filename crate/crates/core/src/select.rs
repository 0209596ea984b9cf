//! Sparsity-aware fit indices, penalty paths and final-model selection.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::data::SampleMoments;
use crate::optim::{multi_start_fit, FitError, FitResult, OptimizerConfig};
use crate::penalty::{PenaltyConfig, PenaltyKind};
use crate::ram::{ml_discrepancy, ml_gradient, RamError, RamModel};

/// Estimates with `|θ| ≤ ZERO_TOL` count as zero.
pub const ZERO_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Metric {
    #[default]
    Bic,
    Rmsea,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Bic => "bic",
            Metric::Rmsea => "rmsea",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "bic" => Ok(Metric::Bic),
            "rmsea" => Ok(Metric::Rmsea),
            other => Err(format!("unknown metric `{other}` (expected bic or rmsea)")),
        }
    }
}

/// Number of free parameters counted as estimated: every unpenalized parameter
/// plus the penalized ones with `|θ| > ZERO_TOL`.
pub fn effective_df(theta: &[f64], ram: &RamModel, pen: &PenaltyConfig) -> usize {
    (0..ram.n_params())
        .filter(|&j| !pen.is_penalized(j) || theta[j].abs() > ZERO_TOL)
        .count()
}

/// `N·f_ml + ln(N)·k`.
pub fn bic(f_ml: f64, n: usize, k: usize) -> f64 {
    let n = n as f64;
    n * f_ml + n.ln() * k as f64
}

/// RMSEA with `χ² = (N − 1)·f_ml`; 0 when `df_model` is 0.
pub fn rmsea(f_ml: f64, n: usize, df_model: usize) -> f64 {
    if df_model == 0 {
        return 0.0;
    }
    let n1 = (n - 1) as f64;
    let chisq = n1 * f_ml;
    let df = df_model as f64;
    ((chisq - df).max(0.0) / (df * n1)).sqrt()
}

/// Index names produced by [`fit_indices`], in output order.
pub const INDEX_NAMES: [&str; 6] = ["f_ml", "df", "npar", "chisq", "rmsea", "bic"];

/// All fit indices for a fit with discrepancy `f_ml` and `k` effective parameters.
pub fn fit_indices(f_ml: f64, n: usize, k: usize, n_moments: usize) -> BTreeMap<String, f64> {
    let df = n_moments.saturating_sub(k);
    let mut out = BTreeMap::new();
    out.insert("f_ml".to_string(), f_ml);
    out.insert("df".to_string(), df as f64);
    out.insert("npar".to_string(), k as f64);
    out.insert("chisq".to_string(), (n - 1) as f64 * f_ml);
    out.insert("rmsea".to_string(), rmsea(f_ml, n, df));
    out.insert("bic".to_string(), bic(f_ml, n, k));
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathConfig {
    pub n_lambda: usize,
    pub jump: f64,
    pub lambda_start: f64,
    pub metric: Metric,
    /// Indices kept in the fits table; empty means all of [`INDEX_NAMES`].
    pub fit_ret: Vec<String>,
    /// Moments for evaluating every fit out of sample.
    pub holdout: Option<SampleMoments>,
    /// Seed each fit with the previous solution (sequential). When false,
    /// fits start from the default start and run in parallel.
    pub warm_start: bool,
}

impl Default for PathConfig {
    fn default() -> Self {
        Self {
            n_lambda: 20,
            jump: 0.05,
            lambda_start: 0.0,
            metric: Metric::Bic,
            fit_ret: Vec::new(),
            holdout: None,
            warm_start: true,
        }
    }
}

impl PathConfig {
    pub fn grid(&self) -> Vec<f64> {
        (0..self.n_lambda)
            .map(|k| self.lambda_start + k as f64 * self.jump)
            .collect()
    }

    pub fn index_names(&self) -> Vec<String> {
        if self.fit_ret.is_empty() {
            INDEX_NAMES.iter().map(|s| s.to_string()).collect()
        } else {
            self.fit_ret.clone()
        }
    }

    pub fn validate(&self) -> Result<(), PathError> {
        if self.n_lambda < 1 {
            return Err(PathError::Config("n_lambda must be >= 1".into()));
        }
        if !(self.jump > 0.0) || !self.jump.is_finite() {
            return Err(PathError::Config("jump must be > 0".into()));
        }
        if !(self.lambda_start >= 0.0) || !self.lambda_start.is_finite() {
            return Err(PathError::Config("lambda_start must be >= 0".into()));
        }
        if let Some(bad) = self
            .fit_ret
            .iter()
            .find(|name| !INDEX_NAMES.contains(&name.as_str()))
        {
            return Err(PathError::Config(format!("unknown fit index `{bad}`")));
        }
        Ok(())
    }
}

/// One row of the fits table.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRow {
    pub lambda: f64,
    pub conv: u8,
    pub f_regsem: f64,
    pub indices: BTreeMap<String, f64>,
    /// Indices at fixed θ against the holdout moments.
    pub holdout: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathResult {
    pub metric: Metric,
    pub index_names: Vec<String>,
    pub param_names: Vec<String>,
    pub pars_pen: Vec<usize>,
    pub fits: Vec<PathRow>,
    /// `n_lambda × q` estimates, one row per λ.
    pub parameters: Vec<Vec<f64>>,
    pub final_index: usize,
    pub final_pars: Vec<f64>,
}

impl PathResult {
    pub fn final_lambda(&self) -> f64 {
        self.fits[self.final_index].lambda
    }

    pub fn n_converged(&self) -> usize {
        self.fits.iter().filter(|r| r.conv == 0).count()
    }

    pub fn final_row(&self) -> &PathRow {
        &self.fits[self.final_index]
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PathError {
    #[error("invalid path settings: {0}")]
    Config(String),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Model(#[from] RamError),
    /// No λ produced a converged fit. `fits` holds the rows anyway.
    #[error("no fit on the penalty path converged")]
    NoneConverged { fits: Vec<PathRow>, parameters: Vec<Vec<f64>> },
}

/// Index of the smallest metric among converged rows (first on ties).
pub fn select_final(fits: &[PathRow], metric: Metric) -> Option<usize> {
    let key = metric.as_str();
    let mut best: Option<(usize, f64)> = None;
    for (i, row) in fits.iter().enumerate() {
        if row.conv != 0 {
            continue;
        }
        let Some(&v) = row.indices.get(key) else {
            continue;
        };
        if v.is_nan() {
            continue;
        }
        if best.is_none_or(|(_, b)| v < b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Fit indices at fixed θ against other moments, without refitting.
pub fn holdout_eval(
    ram: &RamModel,
    theta: &[f64],
    pen: &PenaltyConfig,
    holdout: &SampleMoments,
) -> Result<BTreeMap<String, f64>, RamError> {
    let f = ml_discrepancy(ram, theta, holdout)?;
    let k = effective_df(theta, ram, pen);
    Ok(fit_indices(f, holdout.n(), k, ram.n_moments()))
}

fn row_from_fit(
    fit: &FitResult,
    ram: &RamModel,
    pen: &PenaltyConfig,
    names: &[String],
    holdout: Option<&SampleMoments>,
) -> PathRow {
    let indices = names
        .iter()
        .map(|n| (n.clone(), fit.fit_indices.get(n).copied().unwrap_or(f64::NAN)))
        .collect();
    let holdout = holdout.map(|h| {
        let all = holdout_eval(ram, &fit.theta, pen, h).unwrap_or_else(|_| {
            INDEX_NAMES
                .iter()
                .map(|n| (n.to_string(), f64::NAN))
                .collect()
        });
        names
            .iter()
            .map(|n| (n.clone(), all.get(n).copied().unwrap_or(f64::NAN)))
            .collect()
    });
    PathRow {
        lambda: fit.lambda,
        conv: fit.conv.code(),
        f_regsem: fit.f_regsem,
        indices,
        holdout,
    }
}

/// Fits every λ of the grid in ascending order and selects the final model.
pub fn run_path(
    ram: &RamModel,
    data: &SampleMoments,
    pen_template: &PenaltyConfig,
    path: &PathConfig,
    opt: &OptimizerConfig,
) -> Result<PathResult, PathError> {
    path.validate()?;
    let mut names = path.index_names();
    if !names.iter().any(|n| n == path.metric.as_str()) {
        names.push(path.metric.as_str().to_string());
    }
    let grid = path.grid();
    // the penalized problem is nonconvex in general, and a fit can settle in a
    // basin worse than the penalized-zero model, whose objective does not
    // depend on λ; every fit is checked against it
    let null = if pen_template.pars_pen.is_empty() {
        None
    } else {
        Some(zero_fit(ram, data, pen_template, opt)?).filter(|n| n.conv.is_converged())
    };
    let against_null = |fit: FitResult, pen: &PenaltyConfig| -> Result<FitResult, PathError> {
        let Some(null) = &null else { return Ok(fit) };
        if fit.conv.is_converged() && fit.f_regsem <= null.f_ml {
            return Ok(fit);
        }
        let refit = crate::optim::fit_penalized(ram, data, pen, opt, &null.theta)?;
        let better = refit.conv.is_converged()
            && (!fit.conv.is_converged() || refit.f_regsem < fit.f_regsem);
        Ok(if better { refit } else { fit })
    };

    let fits: Vec<FitResult> = if path.warm_start {
        let mut out: Vec<FitResult> = Vec::with_capacity(grid.len());
        for &lambda in &grid {
            let pen = pen_template.with_lambda(lambda);
            let fit = match out.last() {
                Some(prev) if prev.conv.is_converged() => {
                    crate::optim::fit_penalized(ram, data, &pen, opt, &prev.theta)?
                }
                _ => multi_start_fit(ram, data, &pen, opt)?,
            };
            out.push(against_null(fit, &pen)?);
        }
        out
    } else {
        grid.par_iter()
            .map(|&lambda| {
                let pen = pen_template.with_lambda(lambda);
                against_null(multi_start_fit(ram, data, &pen, opt)?, &pen)
            })
            .collect::<Result<_, _>>()?
    };

    let rows: Vec<PathRow> = fits
        .iter()
        .map(|f| row_from_fit(f, ram, pen_template, &names, path.holdout.as_ref()))
        .collect();
    let parameters: Vec<Vec<f64>> = fits.iter().map(|f| f.theta.clone()).collect();
    let Some(final_index) = select_final(&rows, path.metric) else {
        return Err(PathError::NoneConverged {
            fits: rows,
            parameters,
        });
    };
    Ok(PathResult {
        metric: path.metric,
        index_names: names,
        param_names: ram.param_names(),
        pars_pen: pen_template.pars_pen.clone(),
        final_pars: parameters[final_index].clone(),
        fits: rows,
        parameters,
        final_index,
    })
}

/// Fit with every penalized parameter held at zero.
fn zero_fit(
    ram: &RamModel,
    data: &SampleMoments,
    pen: &PenaltyConfig,
    opt: &OptimizerConfig,
) -> Result<FitResult, PathError> {
    let zeroing = PenaltyConfig::new(PenaltyKind::Lasso, 1e8, pen.pars_pen.clone());
    Ok(multi_start_fit(ram, data, &zeroing, opt)?)
}

/// Smallest λ at which every penalized parameter is exactly zero at a
/// stationary point, `max_j |∂F_ML/∂θ_j| / c_j` evaluated at the fit with the
/// penalized parameters held at zero, where `c_j` is the penalty slope at 0
/// per unit λ. `None` for penalties without a kink at zero (ridge, none).
pub fn lambda_max(
    ram: &RamModel,
    data: &SampleMoments,
    pen_template: &PenaltyConfig,
    opt: &OptimizerConfig,
) -> Result<Option<f64>, PathError> {
    let unit = pen_template.with_lambda(1.0);
    let slopes: Vec<(usize, f64)> = unit
        .pars_pen
        .iter()
        .map(|&j| (j, unit.slope_at_zero(j)))
        .collect();
    if slopes.is_empty() || slopes.iter().all(|&(_, c)| c <= 0.0) {
        return Ok(None);
    }
    let fit = zero_fit(ram, data, &unit, opt)?;
    let g = ml_gradient(ram, &fit.theta, data)?;
    Ok(Some(
        slopes
            .iter()
            .filter(|&&(_, c)| c > 0.0)
            .map(|&(j, c)| g[j].abs() / c)
            .fold(0.0, f64::max),
    ))
}
