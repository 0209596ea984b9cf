//! Penalty functions and their scalar proximal operators.
//!
//! For a step `s` the proximal map of parameter `j` is
//! `argmin_θ ½(θ − z)² + s·pen_j(θ)`, where `pen_j` is the per-parameter
//! penalty including λ (and the adaptive weight `w_j` for the adaptive lasso).
//! The soft-threshold is therefore `t = s·λ`.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub const DEFAULT_ALPHA: f64 = 0.5;
pub const DEFAULT_GAMMA: f64 = 3.7;
/// Cap on adaptive-lasso weights.
pub const MAX_WEIGHT: f64 = 1e6;
/// Estimates below this magnitude get [`MAX_WEIGHT`].
pub const WEIGHT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PenaltyKind {
    None,
    Lasso,
    Ridge,
    ElasticNet,
    AdaptiveLasso,
    Scad,
    Mcp,
}

impl PenaltyKind {
    pub const ALL: [PenaltyKind; 6] = [
        PenaltyKind::Lasso,
        PenaltyKind::Ridge,
        PenaltyKind::ElasticNet,
        PenaltyKind::AdaptiveLasso,
        PenaltyKind::Scad,
        PenaltyKind::Mcp,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PenaltyKind::None => "none",
            PenaltyKind::Lasso => "lasso",
            PenaltyKind::Ridge => "ridge",
            PenaltyKind::ElasticNet => "enet",
            PenaltyKind::AdaptiveLasso => "alasso",
            PenaltyKind::Scad => "scad",
            PenaltyKind::Mcp => "mcp",
        }
    }

    /// Penalties that can set parameters exactly to zero.
    pub fn is_sparse(&self) -> bool {
        !matches!(self, PenaltyKind::None | PenaltyKind::Ridge)
    }
}

impl fmt::Display for PenaltyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PenaltyKind {
    type Err = PenaltyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "none" | "ml" => PenaltyKind::None,
            "lasso" => PenaltyKind::Lasso,
            "ridge" => PenaltyKind::Ridge,
            "enet" | "elastic-net" => PenaltyKind::ElasticNet,
            "alasso" | "adaptive-lasso" => PenaltyKind::AdaptiveLasso,
            "scad" => PenaltyKind::Scad,
            "mcp" => PenaltyKind::Mcp,
            other => return Err(PenaltyError::UnknownKind(other.to_string())),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PenaltyError {
    #[error("unknown penalty type `{0}`")]
    UnknownKind(String),
    #[error("lambda must be finite and >= 0, got {0}")]
    Lambda(f64),
    #[error("alpha must lie in [0, 1], got {0}")]
    Alpha(f64),
    #[error("gamma must exceed {min} for {kind}, got {got}")]
    Gamma {
        kind: PenaltyKind,
        min: f64,
        got: f64,
    },
    #[error("penalized parameter {id} is out of range (model has {q} parameters)")]
    ParamOutOfRange { id: usize, q: usize },
    #[error("adaptive lasso requires one positive weight per penalized parameter")]
    MissingWeights,
    #[error("weights are only used by the adaptive lasso")]
    UnexpectedWeights,
    #[error("adaptive lasso weights need a converged maximum-likelihood fit")]
    MleNotConverged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyConfig {
    pub kind: PenaltyKind,
    pub lambda: f64,
    pub alpha: f64,
    pub gamma: f64,
    /// Penalized parameter ids (0-based), ascending and unique.
    pub pars_pen: Vec<usize>,
    /// Adaptive-lasso weights aligned with `pars_pen`.
    pub weights: Option<Vec<f64>>,
}

impl PenaltyConfig {
    pub fn none() -> Self {
        Self::new(PenaltyKind::None, 0.0, Vec::new())
    }

    pub fn new(kind: PenaltyKind, lambda: f64, mut pars_pen: Vec<usize>) -> Self {
        pars_pen.sort_unstable();
        pars_pen.dedup();
        Self {
            kind,
            lambda,
            alpha: DEFAULT_ALPHA,
            gamma: DEFAULT_GAMMA,
            pars_pen,
            weights: None,
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Self {
        self.weights = Some(weights);
        self
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        let mut out = self.clone();
        out.lambda = lambda;
        out
    }

    /// Checks hyperparameters and that every penalized id is below `q`.
    pub fn validate(&self, q: usize) -> Result<(), PenaltyError> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(PenaltyError::Lambda(self.lambda));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(PenaltyError::Alpha(self.alpha));
        }
        match self.kind {
            PenaltyKind::Scad if !(self.gamma > 2.0) => {
                return Err(PenaltyError::Gamma {
                    kind: self.kind,
                    min: 2.0,
                    got: self.gamma,
                })
            }
            PenaltyKind::Mcp if !(self.gamma > 0.0) => {
                return Err(PenaltyError::Gamma {
                    kind: self.kind,
                    min: 0.0,
                    got: self.gamma,
                })
            }
            _ => {}
        }
        if let Some(&id) = self.pars_pen.iter().find(|&&id| id >= q) {
            return Err(PenaltyError::ParamOutOfRange { id, q });
        }
        match (&self.weights, self.kind) {
            (Some(w), PenaltyKind::AdaptiveLasso) => {
                if w.len() != self.pars_pen.len() || w.iter().any(|&x| !(x > 0.0) || !x.is_finite())
                {
                    return Err(PenaltyError::MissingWeights);
                }
            }
            (None, PenaltyKind::AdaptiveLasso) => return Err(PenaltyError::MissingWeights),
            (Some(_), _) => return Err(PenaltyError::UnexpectedWeights),
            (None, _) => {}
        }
        Ok(())
    }

    /// Position of `id` in `pars_pen`.
    pub fn slot(&self, id: usize) -> Option<usize> {
        self.pars_pen.binary_search(&id).ok()
    }

    pub fn is_penalized(&self, id: usize) -> bool {
        self.kind != PenaltyKind::None && self.slot(id).is_some()
    }

    fn weight_at(&self, slot: usize) -> f64 {
        self.weights.as_ref().map(|w| w[slot]).unwrap_or(1.0)
    }

    /// Penalty contribution of parameter `id` at value `theta` (0 if unpenalized).
    pub fn unit_value(&self, id: usize, theta: f64) -> f64 {
        if self.kind == PenaltyKind::None {
            return 0.0;
        }
        match self.slot(id) {
            Some(slot) => scalar_penalty(
                self.kind,
                theta,
                self.lambda,
                self.alpha,
                self.gamma,
                self.weight_at(slot),
            ),
            None => 0.0,
        }
    }

    /// Sum of penalties over `pars_pen`; assumes the config is valid.
    pub fn total(&self, theta: &[f64]) -> f64 {
        if self.kind == PenaltyKind::None {
            return 0.0;
        }
        self.pars_pen
            .iter()
            .enumerate()
            .map(|(slot, &id)| {
                scalar_penalty(
                    self.kind,
                    theta[id],
                    self.lambda,
                    self.alpha,
                    self.gamma,
                    self.weight_at(slot),
                )
            })
            .sum()
    }

    /// Derivative magnitude of the penalty at 0+ for parameter `id`, i.e. the
    /// threshold an unpenalized gradient must exceed to move it off zero.
    pub fn slope_at_zero(&self, id: usize) -> f64 {
        match (self.kind, self.slot(id)) {
            (PenaltyKind::None | PenaltyKind::Ridge, _) | (_, None) => 0.0,
            (PenaltyKind::ElasticNet, Some(_)) => self.lambda * self.alpha,
            (PenaltyKind::AdaptiveLasso, Some(slot)) => self.lambda * self.weight_at(slot),
            (_, Some(_)) => self.lambda,
        }
    }
}

/// Value of the per-parameter penalty (λ included).
pub fn scalar_penalty(
    kind: PenaltyKind,
    theta: f64,
    lambda: f64,
    alpha: f64,
    gamma: f64,
    weight: f64,
) -> f64 {
    let a = theta.abs();
    match kind {
        PenaltyKind::None => 0.0,
        PenaltyKind::Lasso => lambda * a,
        PenaltyKind::Ridge => lambda * theta * theta,
        PenaltyKind::ElasticNet => lambda * ((1.0 - alpha) * theta * theta + alpha * a),
        PenaltyKind::AdaptiveLasso => lambda * weight * a,
        PenaltyKind::Scad => {
            if a <= lambda {
                lambda * a
            } else if a <= gamma * lambda {
                (2.0 * gamma * lambda * a - a * a - lambda * lambda) / (2.0 * (gamma - 1.0))
            } else {
                lambda * lambda * (gamma + 1.0) / 2.0
            }
        }
        PenaltyKind::Mcp => {
            if a < gamma * lambda {
                lambda * a - a * a / (2.0 * gamma)
            } else {
                gamma * lambda * lambda / 2.0
            }
        }
    }
}

pub fn penalty_value(theta: &[f64], cfg: &PenaltyConfig) -> Result<f64, PenaltyError> {
    cfg.validate(theta.len())?;
    Ok(cfg.total(theta))
}

pub fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Proximal map for parameter `id` with step `step` (threshold `step·λ`).
/// Parameters outside `pars_pen` are returned unchanged.
pub fn prox(z: f64, step: f64, cfg: &PenaltyConfig, id: usize) -> f64 {
    if cfg.kind == PenaltyKind::None {
        return z;
    }
    match cfg.slot(id) {
        Some(slot) => scalar_prox(
            cfg.kind,
            z,
            step,
            cfg.lambda,
            cfg.alpha,
            cfg.gamma,
            cfg.weight_at(slot),
        ),
        None => z,
    }
}

pub fn scalar_prox(
    kind: PenaltyKind,
    z: f64,
    step: f64,
    lambda: f64,
    alpha: f64,
    gamma: f64,
    weight: f64,
) -> f64 {
    let t = step * lambda;
    match kind {
        PenaltyKind::None => z,
        PenaltyKind::Lasso => soft_threshold(z, t),
        PenaltyKind::Ridge => z / (1.0 + 2.0 * t),
        PenaltyKind::ElasticNet => soft_threshold(z, t * alpha) / (1.0 + 2.0 * t * (1.0 - alpha)),
        PenaltyKind::AdaptiveLasso => soft_threshold(z, t * weight),
        PenaltyKind::Scad => z.signum() * scad_prox_abs(z.abs(), step, lambda, gamma),
        PenaltyKind::Mcp => z.signum() * mcp_prox_abs(z.abs(), step, lambda, gamma),
    }
}

/// SCAD proximal map on `a = |z|`. Uses the three-branch rule when the
/// subproblem is convex (`step < γ − 1`) and compares the piecewise minimizers
/// otherwise.
fn scad_prox_abs(a: f64, step: f64, lambda: f64, gamma: f64) -> f64 {
    let t = step * lambda;
    if step < gamma - 1.0 {
        if a <= lambda + t {
            (a - t).max(0.0)
        } else if a <= gamma * lambda {
            ((gamma - 1.0) * a - step * gamma * lambda) / (gamma - 1.0 - step)
        } else {
            a
        }
    } else {
        let obj = |x: f64| 0.5 * (x - a).powi(2) + step * scalar_penalty(PenaltyKind::Scad, x, lambda, 0.0, gamma, 1.0);
        let mut candidates = vec![(a - t).clamp(0.0, lambda), lambda, gamma * lambda, a.max(gamma * lambda)];
        let curvature = 1.0 - step / (gamma - 1.0);
        if curvature > 0.0 {
            let x = (a - step * gamma * lambda / (gamma - 1.0)) / curvature;
            candidates.push(x.clamp(lambda, gamma * lambda));
        }
        argmin(&candidates, obj)
    }
}

/// MCP proximal map on `a = |z|`; closed form for `step < γ`.
fn mcp_prox_abs(a: f64, step: f64, lambda: f64, gamma: f64) -> f64 {
    let t = step * lambda;
    if step < gamma {
        if a <= t {
            0.0
        } else if a <= gamma * lambda {
            (a - t) / (1.0 - step / gamma)
        } else {
            a
        }
    } else {
        let obj = |x: f64| 0.5 * (x - a).powi(2) + step * scalar_penalty(PenaltyKind::Mcp, x, lambda, 0.0, gamma, 1.0);
        argmin(&[0.0, gamma * lambda, a.max(gamma * lambda)], obj)
    }
}

fn argmin(candidates: &[f64], obj: impl Fn(f64) -> f64) -> f64 {
    let mut best = candidates[0];
    let mut best_val = obj(best);
    for &c in &candidates[1..] {
        let v = obj(c);
        if v < best_val {
            best = c;
            best_val = v;
        }
    }
    best
}

/// Adaptive-lasso weights `1/|θ̂_j|`, capped at [`MAX_WEIGHT`].
pub fn alasso_weights(mle_theta: &[f64], pars_pen: &[usize]) -> Vec<f64> {
    pars_pen
        .iter()
        .map(|&id| {
            let a = mle_theta[id].abs();
            if a < WEIGHT_EPS {
                MAX_WEIGHT
            } else {
                (1.0 / a).min(MAX_WEIGHT)
            }
        })
        .collect()
}
