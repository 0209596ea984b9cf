//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sempath::data::{CovDivisor, SampleMoments};
use sempath::penalty::PenaltyKind;
use sempath::ram::{build_ram, implied_moments, RamModel};
use sempath::simulate::{simulate_cfa, simulate_growth, growth_model_text, growth_names};
use sempath::syntax::parse_model;

pub const CFA_NAMES: [&str; 7] = ["A1", "A2", "A3", "A4", "A5", "O2", "N3"];
pub const CFA_LOADINGS: [f64; 7] = [0.8, 0.7, 0.9, 0.6, 0.75, 0.0, 0.0];
pub const CFA_N: usize = 250;

pub fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

pub fn cfa_text() -> String {
    "f1 =~ NA*A1 + A2 + A3 + A4 + A5 + O2 + N3\nf1 ~~ 1*f1\n".to_string()
}

pub fn cfa_model() -> RamModel {
    build_ram(&parse_model(&cfa_text()).unwrap(), &names(&CFA_NAMES)).unwrap()
}

pub fn cfa_data(seed: u64) -> SampleMoments {
    let rows = simulate_cfa(CFA_N, &CFA_LOADINGS, seed);
    SampleMoments::from_raw(&rows, names(&CFA_NAMES), CovDivisor::N).unwrap()
}

pub fn two_indicator_model() -> RamModel {
    build_ram(&parse_model("f =~ y1 + y2").unwrap(), &names(&["y1", "y2"])).unwrap()
}

pub fn two_indicator_data() -> SampleMoments {
    let cov = DMatrix::from_row_slice(2, 2, &[1.3, 0.55, 0.55, 1.1]);
    SampleMoments::new(cov, None, 120, names(&["y1", "y2"])).unwrap()
}

pub fn growth_model() -> RamModel {
    build_ram(&parse_model(&growth_model_text()).unwrap(), &growth_names()).unwrap()
}

pub fn growth_data(n: usize, seed: u64) -> SampleMoments {
    SampleMoments::from_raw(&simulate_growth(n, seed), growth_names(), CovDivisor::N).unwrap()
}

/// Textbook penalty definitions, written independently of the library.
pub fn reference_penalty(kind: PenaltyKind, x: f64, lambda: f64, alpha: f64, gamma: f64, w: f64) -> f64 {
    let a = x.abs();
    match kind {
        PenaltyKind::None => 0.0,
        PenaltyKind::Lasso => lambda * a,
        PenaltyKind::Ridge => lambda * x * x,
        PenaltyKind::ElasticNet => lambda * (alpha * a + (1.0 - alpha) * x * x),
        PenaltyKind::AdaptiveLasso => lambda * w * a,
        // integral of λ{I(t ≤ λ) + (γλ − t)₊/((γ − 1)λ) I(t > λ)} dt
        PenaltyKind::Scad => {
            let mid = a.clamp(lambda, gamma * lambda);
            let first = lambda * a.min(lambda);
            let second = ((gamma * lambda) * (mid - lambda) - 0.5 * (mid * mid - lambda * lambda)) / (gamma - 1.0);
            first + second
        }
        // integral of (λ − t/γ)₊
        PenaltyKind::Mcp => {
            let b = a.min(gamma * lambda);
            lambda * b - b * b / (2.0 * gamma)
        }
    }
}

/// Minimizer of `½(x − z)² + step·pen(x)` on a grid of spacing `h` covering [min(0,z), max(0,z)].
pub fn grid_prox(kind: PenaltyKind, z: f64, step: f64, lambda: f64, alpha: f64, gamma: f64, w: f64, h: f64) -> f64 {
    let lo = z.min(0.0) - 10.0 * h;
    let hi = z.max(0.0) + 10.0 * h;
    let n = ((hi - lo) / h).ceil() as usize;
    let mut best = (f64::INFINITY, 0.0);
    for i in 0..=n {
        let x = lo + i as f64 * h;
        let v = 0.5 * (x - z) * (x - z) + step * reference_penalty(kind, x, lambda, alpha, gamma, w);
        if v < best.0 {
            best = (v, x);
        }
    }
    // zero is always a candidate, so ties at the kink resolve exactly
    let v0 = 0.5 * z * z;
    if v0 <= best.0 {
        best = (v0, 0.0);
    }
    best.1
}

/// Fourth-order central-difference gradient.
pub fn fd_gradient(f: &dyn Fn(&[f64]) -> f64, theta: &[f64]) -> Vec<f64> {
    let mut x = theta.to_vec();
    (0..theta.len())
        .map(|j| {
            let h = 1e-4 * theta[j].abs().max(1.0);
            let mut at = |d: f64| {
                x[j] = theta[j] + d;
                let v = f(&x);
                x[j] = theta[j];
                v
            };
            (-at(2.0 * h) + 8.0 * at(h) - 8.0 * at(-h) + at(-2.0 * h)) / (12.0 * h)
        })
        .collect()
}

fn fd_hessian(f: &dyn Fn(&[f64]) -> f64, theta: &[f64]) -> DMatrix<f64> {
    let q = theta.len();
    let mut hess = DMatrix::zeros(q, q);
    let mut x = theta.to_vec();
    for j in 0..q {
        let h = 1e-4 * theta[j].abs().max(1.0);
        x[j] = theta[j] + h;
        let gp = fd_gradient(f, &x);
        x[j] = theta[j] - h;
        let gm = fd_gradient(f, &x);
        x[j] = theta[j];
        for i in 0..q {
            hess[(i, j)] = (gp[i] - gm[i]) / (2.0 * h);
        }
    }
    (&hess + hess.transpose()) * 0.5
}

/// Damped Newton on function values only (finite-difference derivatives).
/// Returns the minimizer and the minimum, or `None` if it stalls.
pub fn newton_minimize(f: &dyn Fn(&[f64]) -> Option<f64>, start: &[f64]) -> Option<(Vec<f64>, f64)> {
    let big = |x: &[f64]| f(x).unwrap_or(f64::INFINITY);
    let mut theta = start.to_vec();
    let mut value = f(&theta)?;
    for _ in 0..500 {
        let g = DVector::from_vec(fd_gradient(&big, &theta));
        let h = fd_hessian(&big, &theta);
        let q = theta.len();
        let mut shift = 0.0;
        let chol = loop {
            if let Some(c) = (&h + DMatrix::identity(q, q) * shift).cholesky() {
                break c;
            }
            shift = if shift == 0.0 { 1e-6 } else { shift * 10.0 };
            if shift > 1e6 {
                return None;
            }
        };
        let dir = -chol.solve(&g);
        let mut t = 1.0;
        let mut moved = false;
        while t > 1e-12 {
            let cand: Vec<f64> = theta.iter().zip(dir.iter()).map(|(a, d)| a + t * d).collect();
            if let Some(v) = f(&cand) {
                if v <= value {
                    let step = dir.amax() * t;
                    theta = cand;
                    value = v;
                    moved = true;
                    if step < 1e-11 {
                        return Some((theta, value));
                    }
                    break;
                }
            }
            t *= 0.5;
        }
        if !moved {
            return Some((theta, value));
        }
    }
    Some((theta, value))
}

/// A point near `center` (±`spread` multiplicative jitter) at which the implied
/// covariance is positive definite.
pub fn random_admissible(ram: &RamModel, center: &[f64], spread: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let variances = ram.variance_params();
    loop {
        let theta: Vec<f64> = center
            .iter()
            .enumerate()
            .map(|(j, &c)| {
                let base = if c == 0.0 { 0.3 } else { c };
                let v = base * (1.0 + rng.random_range(-spread..spread)) + rng.random_range(-0.1..0.1);
                if variances.contains(&j) { v.abs().max(0.05) } else { v }
            })
            .collect();
        if let Ok((sigma, _)) = implied_moments(ram, &theta) {
            if sigma.clone().cholesky().is_some() {
                return theta;
            }
        }
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Largest relative error, `|a − b| / max(|b|, 1)`.
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs().max(1.0))
        .fold(0.0, f64::max)
}
