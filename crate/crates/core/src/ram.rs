//! RAM representation of a structural equation model.
//!
//! Variables are ordered observed-first, so the filter matrix is `[I 0]`.
//! `A` holds directed paths (row = target, column = source), `S` the
//! (residual) variances and covariances, and the optional `M` vector the
//! intercepts / latent means. The implied moments are
//!
//! ```text
//! B = (I - A)^-1,  Sigma = F B S B' F',  mu = F B M
//! ```

use std::collections::HashSet;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::data::SampleMoments;
use crate::syntax::{latent_is_scaled, CoefficientStatus, ModelSpec};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RamError {
    #[error("latent variable `{0}` has no fixed loading and no fixed variance")]
    UnscaledLatent(String),
    #[error("variable `{0}` is not in the variable order")]
    UnknownVariable(String),
    #[error("two parameters target the same {matrix:?} cell ({row}, {col})")]
    DuplicateCell {
        matrix: MatrixKind,
        row: String,
        col: String,
    },
    #[error("parameter vector has length {got}, model has {expected} free parameters")]
    ParameterLength { expected: usize, got: usize },
    #[error("data variables {got:?} do not match model observed variables {expected:?}")]
    VariableMismatch {
        expected: Vec<String>,
        got: Vec<String>,
    },
    #[error("model has a mean structure but the data carry no means")]
    MissingMeans,
    #[error("(I - A) is singular")]
    SingularPaths,
    #[error("implied covariance matrix is not positive definite")]
    NotPositiveDefinite,
}

impl RamError {
    /// Errors that mean "this θ is outside the admissible region".
    pub fn is_infeasible(&self) -> bool {
        matches!(self, RamError::SingularPaths | RamError::NotPositiveDefinite)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixKind {
    A,
    S,
    M,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Loading,
    Regression,
    Variance,
    Covariance,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    Fixed(f64),
    /// 0-based parameter index.
    Free(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub id: usize,
    pub matrix: MatrixKind,
    pub row: usize,
    pub col: usize,
    pub kind: ParamKind,
    /// Display name, e.g. `f1 -> A1` or `A1 ~~ A1`.
    pub name: String,
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RamModel {
    names: Vec<String>,
    n_observed: usize,
    a: Vec<Cell>,
    s: Vec<Cell>,
    m: Option<Vec<Cell>>,
    params: Vec<Parameter>,
    /// Observed predictors whose moments are held at their sample values.
    exogenous: Vec<usize>,
    /// Latent index -> indices of its indicators (for start values).
    indicators: Vec<Vec<usize>>,
}

impl RamModel {
    pub fn n_vars(&self) -> usize {
        self.names.len()
    }

    pub fn n_observed(&self) -> usize {
        self.n_observed
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn observed_names(&self) -> Vec<String> {
        self.names[..self.n_observed].to_vec()
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn param_names(&self) -> Vec<String> {
        self.params.iter().map(|p| p.name.clone()).collect()
    }

    pub fn has_mean_structure(&self) -> bool {
        self.m.is_some()
    }

    pub fn exogenous(&self) -> &[usize] {
        &self.exogenous
    }

    pub fn a_cell(&self, row: usize, col: usize) -> Cell {
        self.a[row * self.n_vars() + col]
    }

    pub fn s_cell(&self, row: usize, col: usize) -> Cell {
        self.s[row * self.n_vars() + col]
    }

    pub fn m_cell(&self, row: usize) -> Option<Cell> {
        self.m.as_ref().map(|m| m[row])
    }

    /// Filter matrix (p_obs × t).
    pub fn filter(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_observed, self.n_vars(), |i, j| {
            if i == j {
                1.0
            } else {
                0.0
            }
        })
    }

    /// Ids of diagonal S parameters.
    pub fn variance_params(&self) -> Vec<usize> {
        self.params
            .iter()
            .filter(|p| p.kind == ParamKind::Variance)
            .map(|p| p.id)
            .collect()
    }

    /// Ids of all free A-matrix parameters.
    pub fn directed_params(&self) -> Vec<usize> {
        self.params
            .iter()
            .filter(|p| p.matrix == MatrixKind::A)
            .map(|p| p.id)
            .collect()
    }

    pub fn param_by_label(&self, label: &str) -> Option<usize> {
        self.params
            .iter()
            .find(|p| p.label.as_deref() == Some(label))
            .map(|p| p.id)
    }

    pub fn param_by_name(&self, name: &str) -> Option<usize> {
        self.params.iter().find(|p| p.name == name).map(|p| p.id)
    }

    /// Number of sample moments the model has to reproduce, excluding the
    /// block held at sample values for exogenous predictors.
    pub fn n_moments(&self) -> usize {
        let p = self.n_observed;
        let e = self.exogenous.len();
        let mut k = p * (p + 1) / 2 - e * (e + 1) / 2;
        if self.m.is_some() {
            k += p - e;
        }
        k
    }

    /// Store population values for the exogenous block, used when moments are
    /// evaluated without data.
    pub fn bind_exogenous(&mut self, cov: &DMatrix<f64>, means: Option<&DVector<f64>>) {
        let t = self.n_vars();
        for &i in &self.exogenous {
            for &j in &self.exogenous {
                self.s[i * t + j] = Cell::Fixed(cov[(i, j)]);
            }
            if let (Some(m), Some(mv)) = (self.m.as_mut(), means) {
                m[i] = Cell::Fixed(mv[i]);
            }
        }
    }

    /// Start values: directed paths 0.5, variances half the relevant observed
    /// variance, covariances and latent means 0.
    pub fn default_start(&self, data: &SampleMoments) -> Vec<f64> {
        let cov = data.cov();
        self.params
            .iter()
            .map(|p| match p.kind {
                ParamKind::Loading | ParamKind::Regression => 0.5,
                ParamKind::Covariance => 0.0,
                ParamKind::Variance => {
                    if p.row < self.n_observed {
                        0.5 * cov[(p.row, p.row)]
                    } else {
                        let ind = &self.indicators[p.row - self.n_observed];
                        if ind.is_empty() {
                            0.5
                        } else {
                            0.5 * ind.iter().map(|&i| cov[(i, i)]).sum::<f64>() / ind.len() as f64
                        }
                    }
                }
                ParamKind::Mean => {
                    if p.row < self.n_observed {
                        data.means().map(|m| m[p.row]).unwrap_or(0.0)
                    } else {
                        0.0
                    }
                }
            })
            .collect()
    }

    fn check_theta(&self, theta: &[f64]) -> Result<(), RamError> {
        if theta.len() != self.params.len() {
            return Err(RamError::ParameterLength {
                expected: self.params.len(),
                got: theta.len(),
            });
        }
        Ok(())
    }

    fn check_data(&self, data: &SampleMoments) -> Result<(), RamError> {
        if data.names() != &self.names[..self.n_observed] {
            return Err(RamError::VariableMismatch {
                expected: self.observed_names(),
                got: data.names().to_vec(),
            });
        }
        if self.m.is_some() && data.means().is_none() {
            return Err(RamError::MissingMeans);
        }
        Ok(())
    }
}

fn value_of(cell: Cell, theta: &[f64]) -> f64 {
    match cell {
        Cell::Fixed(v) => v,
        Cell::Free(k) => theta[k],
    }
}

struct Builder {
    names: Vec<String>,
    t: usize,
    a: Vec<Option<Cell>>,
    s: Vec<Option<Cell>>,
    params: Vec<Parameter>,
}

impl Builder {
    fn index(&self, name: &str) -> Result<usize, RamError> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| RamError::UnknownVariable(name.to_string()))
    }

    fn place_a(
        &mut self,
        row: usize,
        col: usize,
        status: &CoefficientStatus,
        kind: ParamKind,
    ) -> Result<(), RamError> {
        let idx = row * self.t + col;
        if self.a[idx].is_some() {
            return Err(RamError::DuplicateCell {
                matrix: MatrixKind::A,
                row: self.names[row].clone(),
                col: self.names[col].clone(),
            });
        }
        let name = format!("{} -> {}", self.names[col], self.names[row]);
        self.a[idx] = Some(self.cell_for(status, MatrixKind::A, row, col, kind, name));
        Ok(())
    }

    fn place_s(&mut self, i: usize, j: usize, status: &CoefficientStatus) -> Result<(), RamError> {
        let (row, col) = if i <= j { (i, j) } else { (j, i) };
        if self.s[row * self.t + col].is_some() {
            return Err(RamError::DuplicateCell {
                matrix: MatrixKind::S,
                row: self.names[row].clone(),
                col: self.names[col].clone(),
            });
        }
        let kind = if row == col {
            ParamKind::Variance
        } else {
            ParamKind::Covariance
        };
        let name = format!("{} ~~ {}", self.names[row], self.names[col]);
        let cell = self.cell_for(status, MatrixKind::S, row, col, kind, name);
        self.s[row * self.t + col] = Some(cell);
        self.s[col * self.t + row] = Some(cell);
        Ok(())
    }

    fn s_set(&self, i: usize, j: usize) -> bool {
        self.s[i * self.t + j].is_some()
    }

    fn cell_for(
        &mut self,
        status: &CoefficientStatus,
        matrix: MatrixKind,
        row: usize,
        col: usize,
        kind: ParamKind,
        name: String,
    ) -> Cell {
        match status {
            CoefficientStatus::Fixed(v) => Cell::Fixed(*v),
            CoefficientStatus::Free | CoefficientStatus::Labelled(_) => {
                let id = self.params.len();
                self.params.push(Parameter {
                    id,
                    matrix,
                    row,
                    col,
                    kind,
                    name,
                    label: status.label().map(str::to_string),
                });
                Cell::Free(id)
            }
        }
    }
}

/// Compile a parsed model. Observed variables take the order in which they
/// appear in `var_order`; latents follow in declaration order.
///
/// Parameters are numbered loadings first, then regressions, then explicit
/// variances/covariances, automatic residual variances, automatic latent
/// covariances and finally means.
pub fn build_ram(spec: &ModelSpec, var_order: &[String]) -> Result<RamModel, RamError> {
    for v in &spec.observed_vars {
        if !var_order.contains(v) {
            return Err(RamError::UnknownVariable(v.clone()));
        }
    }
    for l in &spec.latent_vars {
        if !latent_is_scaled(spec, l) {
            return Err(RamError::UnscaledLatent(l.clone()));
        }
    }
    let observed: Vec<String> = var_order
        .iter()
        .filter(|v| spec.observed_vars.contains(v))
        .cloned()
        .collect();
    let n_observed = observed.len();
    let mut names = observed;
    names.extend(spec.latent_vars.iter().cloned());
    let t = names.len();

    let mut b = Builder {
        names,
        t,
        a: vec![None; t * t],
        s: vec![None; t * t],
        params: Vec::new(),
    };

    let mut indicators = vec![Vec::new(); t - n_observed];
    for def in &spec.latent_defs {
        let col = b.index(&def.name)?;
        for ind in &def.indicators {
            let row = b.index(&ind.name)?;
            b.place_a(row, col, &ind.status, ParamKind::Loading)?;
            if row < n_observed {
                indicators[col - n_observed].push(row);
            }
        }
    }
    for reg in &spec.regressions {
        let row = b.index(&reg.outcome)?;
        let col = b.index(&reg.predictor)?;
        b.place_a(row, col, &reg.status, ParamKind::Regression)?;
    }

    let outcomes: HashSet<&str> = spec.regressions.iter().map(|r| r.outcome.as_str()).collect();
    let predictors: HashSet<&str> = spec
        .regressions
        .iter()
        .map(|r| r.predictor.as_str())
        .collect();
    let indicator_names: HashSet<&str> = spec
        .latent_defs
        .iter()
        .flat_map(|d| d.indicators.iter().map(|i| i.name.as_str()))
        .collect();

    let exogenous: Vec<usize> = (0..n_observed)
        .filter(|&i| {
            let n = b.names[i].as_str();
            predictors.contains(n) && !outcomes.contains(n) && !indicator_names.contains(n)
        })
        .collect();

    for cov in &spec.covariances {
        let i = b.index(&cov.left)?;
        let j = b.index(&cov.right)?;
        b.place_s(i, j, &cov.status)?;
    }

    let free = CoefficientStatus::Free;
    for v in 0..t {
        if !exogenous.contains(&v) && !b.s_set(v, v) {
            b.place_s(v, v, &free)?;
        }
    }

    // residual covariances among exogenous latents and among pure outcomes
    let latent_exo: Vec<usize> = (n_observed..t)
        .filter(|&v| !outcomes.contains(b.names[v].as_str()))
        .collect();
    let pure_outcomes: Vec<usize> = (0..t)
        .filter(|&v| {
            let n = b.names[v].as_str();
            outcomes.contains(n) && !predictors.contains(n) && !indicator_names.contains(n)
        })
        .collect();
    for group in [&latent_exo, &pure_outcomes] {
        for (k, &i) in group.iter().enumerate() {
            for &j in &group[k + 1..] {
                if !b.s_set(i, j) {
                    b.place_s(i, j, &free)?;
                }
            }
        }
    }

    // exogenous block, bound to sample values at evaluation
    let mut s_cells: Vec<Cell> = Vec::with_capacity(t * t);
    for i in 0..t {
        for j in 0..t {
            let cell = match b.s[i * t + j] {
                Some(c) => c,
                None if i == j && exogenous.contains(&i) => Cell::Fixed(1.0),
                None => Cell::Fixed(0.0),
            };
            s_cells.push(cell);
        }
    }

    let m = if spec.mean_structure {
        let mut cells = vec![Cell::Fixed(0.0); t];
        for (v, cell) in cells.iter_mut().enumerate().skip(n_observed) {
            let id = b.params.len();
            b.params.push(Parameter {
                id,
                matrix: MatrixKind::M,
                row: v,
                col: 0,
                kind: ParamKind::Mean,
                name: format!("1 -> {}", b.names[v]),
                label: None,
            });
            *cell = Cell::Free(id);
        }
        Some(cells)
    } else {
        None
    };

    let a = b.a.iter().map(|c| c.unwrap_or(Cell::Fixed(0.0))).collect();
    Ok(RamModel {
        names: b.names,
        n_observed,
        a,
        s: s_cells,
        m,
        params: b.params,
        exogenous,
        indicators,
    })
}

/// Numeric state at one parameter vector.
pub(crate) struct Evaluation {
    /// (I - A)^-1
    pub b: DMatrix<f64>,
    /// B S B'
    pub g: DMatrix<f64>,
    /// B M
    pub bm: Option<DVector<f64>>,
    pub sigma: DMatrix<f64>,
    pub mu: Option<DVector<f64>>,
}

pub(crate) fn evaluate(
    ram: &RamModel,
    theta: &[f64],
    data: Option<&SampleMoments>,
) -> Result<Evaluation, RamError> {
    ram.check_theta(theta)?;
    let t = ram.n_vars();
    let p = ram.n_observed;
    let mut i_minus_a = DMatrix::<f64>::identity(t, t);
    let mut s = DMatrix::<f64>::zeros(t, t);
    for i in 0..t {
        for j in 0..t {
            i_minus_a[(i, j)] -= value_of(ram.a[i * t + j], theta);
            s[(i, j)] = value_of(ram.s[i * t + j], theta);
        }
    }
    let mut m = ram
        .m
        .as_ref()
        .map(|cells| DVector::from_iterator(t, cells.iter().map(|&c| value_of(c, theta))));
    if let Some(data) = data {
        for &i in &ram.exogenous {
            for &j in &ram.exogenous {
                if matches!(ram.s[i * t + j], Cell::Fixed(_)) {
                    s[(i, j)] = data.cov()[(i, j)];
                }
            }
            if let (Some(m), Some(dm)) = (m.as_mut(), data.means()) {
                m[i] = dm[i];
            }
        }
    }
    let b = i_minus_a.try_inverse().ok_or(RamError::SingularPaths)?;
    if b.iter().any(|v| !v.is_finite()) {
        return Err(RamError::SingularPaths);
    }
    let g = &b * &s * b.transpose();
    let sigma_raw = g.view((0, 0), (p, p)).into_owned();
    let sigma = (&sigma_raw + sigma_raw.transpose()) * 0.5;
    let bm = m.map(|m| &b * m);
    let mu = bm.as_ref().map(|v| v.rows(0, p).into_owned());
    Ok(Evaluation {
        b,
        g,
        bm,
        sigma,
        mu,
    })
}

/// Implied covariance matrix and (with a mean structure) mean vector.
pub fn implied_moments(
    ram: &RamModel,
    theta: &[f64],
) -> Result<(DMatrix<f64>, Option<DVector<f64>>), RamError> {
    let ev = evaluate(ram, theta, None)?;
    Ok((ev.sigma, ev.mu))
}

struct Discrepancy {
    value: f64,
    sigma_inv: DMatrix<f64>,
    /// Σ⁻¹ (m - μ)
    resid_w: Option<DVector<f64>>,
}

fn discrepancy(
    ram: &RamModel,
    ev: &Evaluation,
    data: &SampleMoments,
) -> Result<Discrepancy, RamError> {
    let p = ram.n_observed;
    let chol = ev
        .sigma
        .clone()
        .cholesky()
        .ok_or(RamError::NotPositiveDefinite)?;
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let sigma_inv = chol.inverse();
    let trace = (&sigma_inv * data.cov()).trace();
    let mut value = log_det + trace - data.log_det() - p as f64;
    let mut resid_w = None;
    if let (Some(mu), Some(m)) = (&ev.mu, data.means()) {
        let d = m - mu;
        let w = &sigma_inv * &d;
        value += d.dot(&w);
        resid_w = Some(w);
    }
    if !value.is_finite() {
        return Err(RamError::NotPositiveDefinite);
    }
    Ok(Discrepancy {
        value,
        sigma_inv,
        resid_w,
    })
}

/// ML discrepancy `ln|Σ| + tr(CΣ⁻¹) − ln|C| − p`, plus the Mahalanobis mean
/// term when a mean structure is present.
pub fn ml_discrepancy(
    ram: &RamModel,
    theta: &[f64],
    data: &SampleMoments,
) -> Result<f64, RamError> {
    ram.check_data(data)?;
    let ev = evaluate(ram, theta, Some(data))?;
    Ok(discrepancy(ram, &ev, data)?.value)
}

/// Analytic gradient of [`ml_discrepancy`].
pub fn ml_gradient(
    ram: &RamModel,
    theta: &[f64],
    data: &SampleMoments,
) -> Result<Vec<f64>, RamError> {
    ml_value_and_gradient(ram, theta, data).map(|(_, g)| g)
}

pub fn ml_value_and_gradient(
    ram: &RamModel,
    theta: &[f64],
    data: &SampleMoments,
) -> Result<(f64, Vec<f64>), RamError> {
    ram.check_data(data)?;
    let ev = evaluate(ram, theta, Some(data))?;
    let disc = discrepancy(ram, &ev, data)?;
    let t = ram.n_vars();
    let p = ram.n_observed;

    // W = Σ⁻¹ − Σ⁻¹CΣ⁻¹ − vv', lifted to t×t through F
    let si = &disc.sigma_inv;
    let mut w = si - si * data.cov() * si;
    if let Some(v) = &disc.resid_w {
        w -= v * v.transpose();
    }
    let mut wt = DMatrix::<f64>::zeros(t, t);
    wt.view_mut((0, 0), (p, p)).copy_from(&w);

    let wb = &wt * &ev.b;
    let k = &ev.g * &wb; // G Wt B
    let l = ev.b.transpose() * &wb; // B' Wt B
    let u = disc.resid_w.as_ref().map(|v| {
        let mut lifted = DVector::<f64>::zeros(t);
        lifted.rows_mut(0, p).copy_from(v);
        ev.b.transpose() * lifted
    });

    let mut grad = vec![0.0; ram.n_params()];
    for i in 0..t {
        for j in 0..t {
            if let Cell::Free(id) = ram.a[i * t + j] {
                grad[id] += 2.0 * k[(j, i)];
                if let (Some(u), Some(bm)) = (&u, &ev.bm) {
                    grad[id] -= 2.0 * u[i] * bm[j];
                }
            }
        }
    }
    for i in 0..t {
        for j in i..t {
            if let Cell::Free(id) = ram.s[i * t + j] {
                grad[id] += if i == j { l[(i, i)] } else { 2.0 * l[(i, j)] };
            }
        }
    }
    if let (Some(cells), Some(u)) = (&ram.m, &u) {
        for (i, cell) in cells.iter().enumerate() {
            if let Cell::Free(id) = cell {
                grad[*id] -= 2.0 * u[i];
            }
        }
    }
    Ok((disc.value, grad))
}

/// Standard errors from the inverse observed information `(N/2)·∇²F_ML`,
/// with the Hessian taken by central differences of the analytic gradient.
/// Entries are NaN when the information is not invertible or a diagonal is negative.
pub fn ml_standard_errors(
    ram: &RamModel,
    theta: &[f64],
    data: &SampleMoments,
) -> Result<Vec<f64>, RamError> {
    let q = ram.n_params();
    let mut hess = DMatrix::<f64>::zeros(q, q);
    let mut work = theta.to_vec();
    for j in 0..q {
        let h = 1e-5 * theta[j].abs().max(1.0);
        work[j] = theta[j] + h;
        let gp = ml_gradient(ram, &work, data)?;
        work[j] = theta[j] - h;
        let gm = ml_gradient(ram, &work, data)?;
        work[j] = theta[j];
        for i in 0..q {
            hess[(i, j)] = (gp[i] - gm[i]) / (2.0 * h);
        }
    }
    let info = (&hess + hess.transpose()) * (0.25 * data.n() as f64);
    Ok(match info.try_inverse() {
        Some(cov) => (0..q)
            .map(|j| {
                let v = cov[(j, j)];
                if v > 0.0 {
                    v.sqrt()
                } else {
                    f64::NAN
                }
            })
            .collect(),
        None => vec![f64::NAN; q],
    })
}

/// Printable A / S / F (and M) matrices with 1-based parameter numbers in
/// free cells and constants elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixReport {
    pub a: String,
    pub s: String,
    pub f: String,
    pub m: Option<String>,
}

impl fmt::Display for MatrixReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "$A")?;
        writeln!(f, "{}", self.a)?;
        writeln!(f, "$S")?;
        writeln!(f, "{}", self.s)?;
        writeln!(f, "$F")?;
        write!(f, "{}", self.f)?;
        if let Some(m) = &self.m {
            writeln!(f)?;
            writeln!(f, "$M")?;
            write!(f, "{m}")?;
        }
        Ok(())
    }
}

fn fmt_cell(cell: Cell) -> String {
    match cell {
        Cell::Free(id) => (id + 1).to_string(),
        Cell::Fixed(v) => format!("{v}"),
    }
}

fn render_table(row_names: &[String], col_names: &[String], entries: &[Vec<String>]) -> String {
    let rw = row_names.iter().map(|r| r.len()).max().unwrap_or(0);
    let widths: Vec<usize> = col_names
        .iter()
        .enumerate()
        .map(|(j, c)| entries.iter().map(|r| r[j].len()).chain([c.len()]).max().unwrap_or(1))
        .collect();
    let mut out = format!("{:rw$}", "");
    for (c, w) in col_names.iter().zip(&widths) {
        out.push_str(&format!(" {c:>w$}"));
    }
    for (r, row) in row_names.iter().zip(entries) {
        out.push('\n');
        out.push_str(&format!("{r:rw$}"));
        for (e, w) in row.iter().zip(&widths) {
            out.push_str(&format!(" {e:>w$}"));
        }
    }
    out
}

pub fn extract_matrices(ram: &RamModel) -> MatrixReport {
    let t = ram.n_vars();
    let names = &ram.names;
    let grid = |cells: &[Cell]| -> Vec<Vec<String>> {
        (0..t)
            .map(|i| (0..t).map(|j| fmt_cell(cells[i * t + j])).collect())
            .collect()
    };
    let a = render_table(names, names, &grid(&ram.a));
    let s = render_table(names, names, &grid(&ram.s));
    let fm = ram.filter();
    let f_entries: Vec<Vec<String>> = (0..ram.n_observed)
        .map(|i| (0..t).map(|j| format!("{}", fm[(i, j)])).collect())
        .collect();
    let f = render_table(&names[..ram.n_observed], names, &f_entries);
    let m = ram.m.as_ref().map(|cells| {
        let entries: Vec<Vec<String>> = cells.iter().map(|&c| vec![fmt_cell(c)]).collect();
        render_table(names, &["1".to_string()], &entries)
    });
    MatrixReport { a, s, f, m }
}
