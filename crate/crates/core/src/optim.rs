//! Proximal gradient and proximal quasi-Newton minimization of
//! `g(θ) + P(θ)` with backtracking.
//!
//! Each iteration takes a smooth step `z = θ − s·d` (with `d` the gradient or
//! `H⁻¹·gradient`), applies the penalty's proximal map with step `s` to the
//! penalized coordinates, and projects floored coordinates. `s` is halved until
//!
//! ```text
//! F(θ⁺) ≤ F(θ) + c·Δ,   Δ = ∇g(θ)ᵀ(θ⁺ − θ) + P(θ⁺) − P(θ) < 0
//! ```

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::SampleMoments;
use crate::penalty::{prox, PenaltyConfig, PenaltyError};
use crate::ram::{ml_discrepancy, ml_value_and_gradient, RamError, RamModel};
use crate::select;

/// Models with more free parameters than this default to the quasi-Newton variant.
pub const QUASI_NEWTON_THRESHOLD: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    GradientProx,
    QuasiNewtonProx,
    /// Quasi-Newton above [`QUASI_NEWTON_THRESHOLD`] parameters, gradient otherwise.
    Auto,
}

impl Method {
    pub fn resolve(self, n_params: usize) -> Method {
        match self {
            Method::Auto if n_params > QUASI_NEWTON_THRESHOLD => Method::QuasiNewtonProx,
            Method::Auto => Method::GradientProx,
            m => m,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub method: Method,
    pub max_iter: usize,
    pub tol: f64,
    pub step_init: f64,
    pub backtrack_factor: f64,
    pub armijo_c: f64,
    pub n_starts: usize,
    pub variance_floor: f64,
    pub seed: u64,
    /// Keep the objective at every accepted iterate in [`FitResult::history`].
    pub record_history: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            method: Method::Auto,
            max_iter: 5000,
            tol: 1e-5,
            step_init: 1.0,
            backtrack_factor: 0.5,
            armijo_c: 1e-4,
            n_starts: 1,
            variance_floor: 1e-4,
            seed: 0,
            record_history: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error(transparent)]
    Penalty(#[from] PenaltyError),
    #[error(transparent)]
    Model(#[from] RamError),
    #[error("invalid optimizer settings: {0}")]
    Config(String),
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), FitError> {
        if self.max_iter < 1 {
            return Err(FitError::Config("max_iter must be >= 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(FitError::Config("tol must be > 0".into()));
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return Err(FitError::Config("backtrack_factor must lie in (0, 1)".into()));
        }
        if !(self.step_init > 0.0) {
            return Err(FitError::Config("step_init must be > 0".into()));
        }
        if self.n_starts < 1 {
            return Err(FitError::Config("n_starts must be >= 1".into()));
        }
        if !(self.variance_floor >= 0.0) {
            return Err(FitError::Config("variance_floor must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Convergence {
    Converged,
    /// Iteration cap reached or the line search kept failing.
    NotConverged,
    /// No admissible point was found.
    Infeasible,
}

impl Convergence {
    pub fn code(self) -> u8 {
        match self {
            Convergence::Converged => 0,
            Convergence::NotConverged => 1,
            Convergence::Infeasible => 99,
        }
    }

    pub fn is_converged(self) -> bool {
        self == Convergence::Converged
    }
}

/// Smooth part of the objective. `None` marks an inadmissible point.
pub trait SmoothObjective {
    fn dim(&self) -> usize;
    fn value(&self, theta: &[f64]) -> Option<f64>;
    fn value_and_gradient(&self, theta: &[f64]) -> Option<(f64, Vec<f64>)>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProxOutcome {
    pub theta: Vec<f64>,
    pub smooth: f64,
    pub penalty: f64,
    pub conv: Convergence,
    pub iterations: usize,
    /// Unit-step proximal-gradient residual at the final point.
    pub residual: f64,
    pub history: Vec<f64>,
}

/// Inverse-Hessian BFGS update. Skipped (returns a copy) when the curvature
/// `sᵀy` is not sufficiently positive.
pub fn bfgs_update(h_inv: &DMatrix<f64>, s: &DVector<f64>, y: &DVector<f64>) -> DMatrix<f64> {
    let sy = s.dot(y);
    if !(sy > 1e-10 * s.norm() * y.norm()) {
        return h_inv.clone();
    }
    let rho = 1.0 / sy;
    let n = s.len();
    let left = DMatrix::<f64>::identity(n, n) - (s * y.transpose()) * rho;
    let mut out = &left * h_inv * left.transpose() + (s * s.transpose()) * rho;
    out = (&out + out.transpose()) * 0.5;
    out
}

fn prox_point(
    theta: &[f64],
    dir: &[f64],
    step: f64,
    pen: &PenaltyConfig,
    floored: &[usize],
    floor: f64,
) -> Vec<f64> {
    let mut out: Vec<f64> = theta
        .iter()
        .zip(dir)
        .enumerate()
        .map(|(j, (&t, &d))| prox(t - step * d, step, pen, j))
        .collect();
    for &j in floored {
        if out[j] < floor {
            out[j] = floor;
        }
    }
    out
}

/// `max_j |θ_j − prox(θ_j − ∇g_j, 1)|`, the stationarity measure used for convergence.
pub fn prox_residual(
    theta: &[f64],
    grad: &[f64],
    pen: &PenaltyConfig,
    floored: &[usize],
    floor: f64,
) -> f64 {
    let p = prox_point(theta, grad, 1.0, pen, floored, floor);
    theta
        .iter()
        .zip(&p)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

enum LineSearch {
    Accepted {
        theta: Vec<f64>,
        smooth: f64,
        grad: Vec<f64>,
        penalty: f64,
    },
    /// Some trial points were admissible but none gave sufficient decrease.
    NoDecrease,
    /// Every trial point was inadmissible.
    Infeasible,
}

#[allow(clippy::too_many_arguments)]
fn line_search(
    obj: &dyn SmoothObjective,
    pen: &PenaltyConfig,
    opt: &OptimizerConfig,
    floored: &[usize],
    theta: &[f64],
    smooth: f64,
    grad: &[f64],
    penalty: f64,
    dir: &[f64],
    step0: f64,
) -> LineSearch {
    let total = smooth + penalty;
    let mut step = step0;
    let mut any_feasible = false;
    let min_step = 1e-20 * step0.max(1.0);
    while step > min_step {
        let cand = prox_point(theta, dir, step, pen, floored, opt.variance_floor);
        let pen_c = pen.total(&cand);
        let delta: f64 = grad
            .iter()
            .zip(cand.iter().zip(theta))
            .map(|(g, (c, t))| g * (c - t))
            .sum::<f64>()
            + pen_c
            - penalty;
        if cand == theta {
            return LineSearch::NoDecrease;
        }
        if let Some(v) = obj.value(&cand) {
            any_feasible = true;
            if delta < 0.0 && v + pen_c <= total + opt.armijo_c * delta && v + pen_c <= total {
                if let Some((v2, g2)) = obj.value_and_gradient(&cand) {
                    return LineSearch::Accepted {
                        theta: cand,
                        smooth: v2,
                        grad: g2,
                        penalty: pen_c,
                    };
                }
            }
        }
        step *= opt.backtrack_factor;
    }
    if any_feasible {
        LineSearch::NoDecrease
    } else {
        LineSearch::Infeasible
    }
}

/// Minimize `obj + pen` from `theta0`. `floored` coordinates are kept at or above
/// `opt.variance_floor`.
pub fn minimize_prox(
    obj: &dyn SmoothObjective,
    pen: &PenaltyConfig,
    opt: &OptimizerConfig,
    floored: &[usize],
    theta0: &[f64],
) -> ProxOutcome {
    let n = obj.dim();
    let method = opt.method.resolve(n);
    let mut theta = theta0.to_vec();
    for &j in floored {
        theta[j] = theta[j].max(opt.variance_floor);
    }
    let infeasible = |theta: Vec<f64>| ProxOutcome {
        penalty: pen.total(&theta),
        theta,
        smooth: f64::INFINITY,
        conv: Convergence::Infeasible,
        iterations: 0,
        residual: f64::INFINITY,
        history: Vec::new(),
    };
    let Some((mut smooth, mut grad)) = obj.value_and_gradient(&theta) else {
        return infeasible(theta);
    };
    let mut penalty = pen.total(&theta);
    let mut history = Vec::new();
    if opt.record_history {
        history.push(smooth + penalty);
    }
    let mut h_inv: Option<DMatrix<f64>> = None;
    let mut bb_step: Option<f64> = None;
    let mut conv = Convergence::NotConverged;
    let mut iterations = 0;
    let mut residual = prox_residual(&theta, &grad, pen, floored, opt.variance_floor);

    while iterations < opt.max_iter {
        if residual < opt.tol {
            conv = Convergence::Converged;
            break;
        }
        iterations += 1;

        let mut attempt = match method {
            Method::QuasiNewtonProx => {
                let dir: Vec<f64> = match &h_inv {
                    Some(h) => (h * DVector::from_column_slice(&grad)).iter().copied().collect(),
                    None => grad.clone(),
                };
                line_search(
                    obj, pen, opt, floored, &theta, smooth, &grad, penalty, &dir, opt.step_init,
                )
            }
            _ => {
                let s0 = bb_step.unwrap_or(opt.step_init);
                line_search(obj, pen, opt, floored, &theta, smooth, &grad, penalty, &grad, s0)
            }
        };
        // fall back to a plain gradient step from the default step size
        let fallback_needed = !matches!(attempt, LineSearch::Accepted { .. })
            && (h_inv.is_some() || bb_step.is_some());
        if fallback_needed {
            h_inv = None;
            bb_step = None;
            attempt = line_search(
                obj, pen, opt, floored, &theta, smooth, &grad, penalty, &grad, opt.step_init,
            );
        }

        match attempt {
            LineSearch::Accepted {
                theta: next,
                smooth: s_next,
                grad: g_next,
                penalty: p_next,
            } => {
                let ds = DVector::from_iterator(n, next.iter().zip(&theta).map(|(a, b)| a - b));
                let dy = DVector::from_iterator(n, g_next.iter().zip(&grad).map(|(a, b)| a - b));
                let sy = ds.dot(&dy);
                match method {
                    Method::QuasiNewtonProx => {
                        let h = h_inv.take().unwrap_or_else(|| {
                            let scale = if sy > 0.0 { sy / dy.norm_squared() } else { 1.0 };
                            DMatrix::identity(n, n) * scale
                        });
                        h_inv = Some(bfgs_update(&h, &ds, &dy));
                    }
                    _ => {
                        bb_step = (sy > 0.0).then(|| (ds.norm_squared() / sy).clamp(1e-8, 1e8));
                    }
                }
                theta = next;
                smooth = s_next;
                grad = g_next;
                penalty = p_next;
                residual = prox_residual(&theta, &grad, pen, floored, opt.variance_floor);
                if opt.record_history {
                    history.push(smooth + penalty);
                }
            }
            LineSearch::NoDecrease => {
                conv = if residual < opt.tol {
                    Convergence::Converged
                } else {
                    Convergence::NotConverged
                };
                break;
            }
            LineSearch::Infeasible => {
                conv = Convergence::Infeasible;
                break;
            }
        }
    }
    if iterations >= opt.max_iter && residual < opt.tol {
        conv = Convergence::Converged;
    }

    ProxOutcome {
        theta,
        smooth,
        penalty,
        conv,
        iterations,
        residual,
        history,
    }
}

/// ML discrepancy as a [`SmoothObjective`].
pub struct SemObjective<'a> {
    pub ram: &'a RamModel,
    pub data: &'a SampleMoments,
}

impl SmoothObjective for SemObjective<'_> {
    fn dim(&self) -> usize {
        self.ram.n_params()
    }

    fn value(&self, theta: &[f64]) -> Option<f64> {
        ml_discrepancy(self.ram, theta, self.data).ok()
    }

    fn value_and_gradient(&self, theta: &[f64]) -> Option<(f64, Vec<f64>)> {
        ml_value_and_gradient(self.ram, theta, self.data).ok()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub theta: Vec<f64>,
    pub f_ml: f64,
    pub f_regsem: f64,
    pub conv: Convergence,
    pub iterations: usize,
    pub lambda: f64,
    pub fit_indices: BTreeMap<String, f64>,
    pub history: Vec<f64>,
}

fn fit_from_start(
    ram: &RamModel,
    data: &SampleMoments,
    pen: &PenaltyConfig,
    opt: &OptimizerConfig,
    theta0: &[f64],
) -> FitResult {
    let obj = SemObjective { ram, data };
    let floored = ram.variance_params();
    let out = minimize_prox(&obj, pen, opt, &floored, theta0);
    let f_ml = out.smooth;
    let k = select::effective_df(&out.theta, ram, pen);
    let fit_indices = select::fit_indices(f_ml, data.n(), k, ram.n_moments());
    FitResult {
        f_regsem: f_ml + out.penalty,
        theta: out.theta,
        f_ml,
        conv: out.conv,
        iterations: out.iterations,
        lambda: pen.lambda,
        fit_indices,
        history: out.history,
    }
}

fn check_inputs(
    ram: &RamModel,
    data: &SampleMoments,
    pen: &PenaltyConfig,
    opt: &OptimizerConfig,
) -> Result<(), FitError> {
    opt.validate()?;
    pen.validate(ram.n_params())?;
    // surface data/model mismatches as errors rather than as infeasibility
    let start = ram.default_start(data);
    match ml_discrepancy(ram, &start, data) {
        Err(e) if !e.is_infeasible() => Err(e.into()),
        _ => Ok(()),
    }
}

/// Penalized ML fit from `theta0`.
pub fn fit_penalized(
    ram: &RamModel,
    data: &SampleMoments,
    pen: &PenaltyConfig,
    opt: &OptimizerConfig,
    theta0: &[f64],
) -> Result<FitResult, FitError> {
    check_inputs(ram, data, pen, opt)?;
    if theta0.len() != ram.n_params() {
        return Err(RamError::ParameterLength {
            expected: ram.n_params(),
            got: theta0.len(),
        }
        .into());
    }
    Ok(fit_from_start(ram, data, pen, opt, theta0))
}

/// Start vectors for a multi-start run: the default start followed by
/// `n_starts − 1` copies jittered multiplicatively by up to ±50%.
pub fn start_values(ram: &RamModel, data: &SampleMoments, n_starts: usize, seed: u64) -> Vec<Vec<f64>> {
    let base = ram.default_start(data);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut starts = vec![base.clone()];
    for _ in 1..n_starts {
        starts.push(
            base.iter()
                .map(|&v| v * (1.0 + rng.random_range(-0.5..0.5)))
                .collect(),
        );
    }
    starts
}

/// Runs [`fit_penalized`] from every start of [`start_values`] and keeps the
/// converged fit with the lowest penalized objective. If no start converges
/// the best incumbent is returned with `conv = NotConverged`.
pub fn multi_start_fit(
    ram: &RamModel,
    data: &SampleMoments,
    pen: &PenaltyConfig,
    opt: &OptimizerConfig,
) -> Result<FitResult, FitError> {
    check_inputs(ram, data, pen, opt)?;
    let fits: Vec<FitResult> = start_values(ram, data, opt.n_starts, opt.seed)
        .iter()
        .map(|start| fit_from_start(ram, data, pen, opt, start))
        .collect();
    let better = |a: &FitResult, b: &FitResult| a.f_regsem < b.f_regsem;
    let mut best: Option<&FitResult> = None;
    for f in fits.iter().filter(|f| f.conv.is_converged()) {
        if best.is_none_or(|b| better(f, b)) {
            best = Some(f);
        }
    }
    if let Some(b) = best {
        return Ok(b.clone());
    }
    let mut incumbent = fits
        .iter()
        .filter(|f| f.f_regsem.is_finite())
        .fold(None::<&FitResult>, |acc, f| match acc {
            Some(a) if !better(f, a) => Some(a),
            _ => Some(f),
        })
        .unwrap_or(&fits[0])
        .clone();
    if incumbent.conv == Convergence::Converged || incumbent.f_regsem.is_finite() {
        incumbent.conv = Convergence::NotConverged;
    }
    Ok(incumbent)
}
