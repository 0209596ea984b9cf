//! Data generation for the growth-with-covariates and one-factor designs, and
//! the false-positive / false-negative replication study.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::data::{CovDivisor, DataError, SampleMoments};
use crate::optim::{multi_start_fit, OptimizerConfig};
use crate::penalty::{alasso_weights, PenaltyConfig, PenaltyKind};
use crate::ram::{build_ram, ml_standard_errors, RamError, RamModel};
use crate::select::{lambda_max, run_path, PathConfig, ZERO_TOL};
use crate::syntax::{parse_model, ParseError};

/// Two-sided 5% critical value of the standard normal.
pub const Z_CRIT: f64 = 1.959_963_984_540_054;

pub const GROWTH_N_COVARIATES: usize = 10;
pub const GROWTH_ZETA_I_VAR: f64 = 1.0;
pub const GROWTH_ZETA_S_VAR: f64 = 0.25;
pub const GROWTH_EPS_VAR: f64 = 1.0;

/// Column names of [`simulate_growth`]: `x1..x4` then `c1..c10`.
pub fn growth_names() -> Vec<String> {
    (1..=4)
        .map(|t| format!("x{t}"))
        .chain((1..=GROWTH_N_COVARIATES).map(|k| format!("c{k}")))
        .collect()
}

/// Linear growth over four occasions with intercept and slope regressed on ten covariates.
pub fn growth_model_text() -> String {
    let cov: Vec<String> = (1..=GROWTH_N_COVARIATES).map(|k| format!("c{k}")).collect();
    let rhs = cov.join(" + ");
    format!(
        "i =~ 1*x1 + 1*x2 + 1*x3 + 1*x4\n\
         s =~ 0*x1 + 1*x2 + 2*x3 + 3*x4\n\
         i ~ {rhs}\n\
         s ~ {rhs}\n"
    )
}

/// Generating regression of intercept and slope on covariate `k` (1-based).
pub fn growth_true_effect(k: usize) -> f64 {
    match k {
        1 => 1.0,
        2 => 0.2,
        _ => 0.0,
    }
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn growth_rows(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let p = 4 + GROWTH_N_COVARIATES;
    let mut out = DMatrix::<f64>::zeros(n, p);
    for r in 0..n {
        let mut lin = 0.0;
        for k in 1..=GROWTH_N_COVARIATES {
            let c = standard_normal(rng);
            out[(r, 3 + k)] = c;
            lin += growth_true_effect(k) * c;
        }
        let i = lin + GROWTH_ZETA_I_VAR.sqrt() * standard_normal(rng);
        let s = lin + GROWTH_ZETA_S_VAR.sqrt() * standard_normal(rng);
        for t in 0..4 {
            out[(r, t)] = i + t as f64 * s + GROWTH_EPS_VAR.sqrt() * standard_normal(rng);
        }
    }
    out
}

fn cfa_rows(n: usize, loadings: &[f64], residual_vars: &[f64], rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let sd: Vec<f64> = residual_vars.iter().map(|v| v.sqrt()).collect();
    let mut out = DMatrix::<f64>::zeros(n, loadings.len());
    for r in 0..n {
        let f = standard_normal(rng);
        for (j, &l) in loadings.iter().enumerate() {
            out[(r, j)] = l * f + sd[j] * standard_normal(rng);
        }
    }
    out
}

/// `N × 14` raw data, columns as in [`growth_names`].
pub fn simulate_growth(n: usize, seed: u64) -> DMatrix<f64> {
    growth_rows(n, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// One standard-normal factor with unit-variance residuals: `y_j = λ_j·f + ε_j`.
pub fn simulate_cfa(n: usize, loadings: &[f64], seed: u64) -> DMatrix<f64> {
    let unit = vec![1.0; loadings.len()];
    cfa_rows(n, loadings, &unit, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// As [`simulate_cfa`] with residual variances `residual_vars`.
pub fn simulate_cfa_with_residuals(n: usize, loadings: &[f64], residual_vars: &[f64], seed: u64) -> DMatrix<f64> {
    cfa_rows(n, loadings, residual_vars, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Residual variances `1 − λ_j²` giving unit-variance indicators.
pub fn standardized_residuals(loadings: &[f64]) -> Vec<f64> {
    loadings.iter().map(|l| 1.0 - l * l).collect()
}

/// One-factor model with every loading free and the factor variance fixed to 1.
pub fn cfa_model_text(factor: &str, indicators: &[String]) -> String {
    let rhs: Vec<String> = indicators.iter().map(|v| format!("NA*{v}")).collect();
    format!("{factor} =~ {}\n{factor} ~~ 1*{factor}\n", rhs.join(" + "))
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelKind {
    GrowthCovariates,
    OneFactorCfa {
        names: Vec<String>,
        loadings: Vec<f64>,
        residual_vars: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimDesign {
    pub model_kind: ModelKind,
    pub n: usize,
    /// True values of the classified parameters, keyed by parameter name.
    pub true_params: BTreeMap<String, f64>,
    pub n_reps: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid design: {0}")]
    Design(String),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Model(#[from] RamError),
}

impl SimDesign {
    pub fn growth(n: usize, n_reps: usize, seed: u64) -> Self {
        let true_params = (1..=GROWTH_N_COVARIATES)
            .flat_map(|k| {
                ["i", "s"]
                    .into_iter()
                    .map(move |lv| (format!("c{k} -> {lv}"), growth_true_effect(k)))
            })
            .collect();
        Self {
            model_kind: ModelKind::GrowthCovariates,
            n,
            true_params,
            n_reps,
            seed,
        }
    }

    /// Classifies every loading of a one-factor model named `f1`.
    pub fn cfa(
        names: Vec<String>,
        loadings: Vec<f64>,
        residual_vars: Vec<f64>,
        n: usize,
        n_reps: usize,
        seed: u64,
    ) -> Self {
        let true_params = names
            .iter()
            .zip(&loadings)
            .map(|(v, &l)| (format!("f1 -> {v}"), l))
            .collect();
        Self {
            model_kind: ModelKind::OneFactorCfa {
                names,
                loadings,
                residual_vars,
            },
            n,
            true_params,
            n_reps,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.n < 10 {
            return Err(SimError::Design(format!("N must be >= 10, got {}", self.n)));
        }
        if self.n_reps < 1 {
            return Err(SimError::Design("n_reps must be >= 1".into()));
        }
        if let ModelKind::OneFactorCfa {
            names,
            loadings,
            residual_vars,
        } = &self.model_kind
        {
            if names.len() != loadings.len() || names.len() < 3 {
                return Err(SimError::Design(
                    "need at least 3 indicators with one loading each".into(),
                ));
            }
            if residual_vars.len() != loadings.len() || residual_vars.iter().any(|&v| !(v > 0.0)) {
                return Err(SimError::Design(
                    "need one positive residual variance per indicator".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn names(&self) -> Vec<String> {
        match &self.model_kind {
            ModelKind::GrowthCovariates => growth_names(),
            ModelKind::OneFactorCfa { names, .. } => names.clone(),
        }
    }

    pub fn model_text(&self) -> String {
        match &self.model_kind {
            ModelKind::GrowthCovariates => growth_model_text(),
            ModelKind::OneFactorCfa { names, .. } => cfa_model_text("f1", names),
        }
    }

    pub fn build_model(&self) -> Result<RamModel, SimError> {
        let spec = parse_model(&self.model_text())?;
        Ok(build_ram(&spec, &self.names())?)
    }

    /// RNG for replication `rep`: the master seed with its own stream.
    pub fn rep_rng(&self, rep: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(rep as u64);
        rng
    }

    /// Raw data for replication `rep`.
    pub fn simulate_rep(&self, rep: usize) -> DMatrix<f64> {
        let mut rng = self.rep_rng(rep);
        match &self.model_kind {
            ModelKind::GrowthCovariates => growth_rows(self.n, &mut rng),
            ModelKind::OneFactorCfa {
                loadings,
                residual_vars,
                ..
            } => cfa_rows(self.n, loadings, residual_vars, &mut rng),
        }
    }

    pub fn moments_rep(&self, rep: usize) -> Result<SampleMoments, DataError> {
        SampleMoments::from_raw(&self.simulate_rep(rep), self.names(), CovDivisor::N)
    }
}

/// How the λ grid of each replication is laid out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GridRule {
    /// Use `path.jump` as given.
    Fixed,
    /// Per replication and method, spread `n_lambda` values from
    /// `lambda_start` to `factor · λ_max`.
    ScaledToLambdaMax { factor: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub path: PathConfig,
    pub grid: GridRule,
    pub opt: OptimizerConfig,
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            path: PathConfig {
                n_lambda: 40,
                ..Default::default()
            },
            grid: GridRule::ScaledToLambdaMax { factor: 1.05 },
            opt: OptimizerConfig::default(),
            alpha: crate::penalty::DEFAULT_ALPHA,
            gamma: crate::penalty::DEFAULT_GAMMA,
        }
    }
}

/// Classification counts for one method, summed over converged replications.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MethodCounts {
    pub n_reps: usize,
    pub n_converged: usize,
    pub false_pos: usize,
    pub true_neg: usize,
    pub false_neg: usize,
    pub true_pos: usize,
    /// Replications with every parameter classified correctly.
    pub exact: usize,
}

impl MethodCounts {
    fn rate(num: usize, den: usize) -> f64 {
        if den == 0 {
            f64::NAN
        } else {
            num as f64 / den as f64
        }
    }

    pub fn false_positive_rate(&self) -> f64 {
        Self::rate(self.false_pos, self.false_pos + self.true_neg)
    }

    pub fn false_negative_rate(&self) -> f64 {
        Self::rate(self.false_neg, self.false_neg + self.true_pos)
    }

    pub fn convergence_rate(&self) -> f64 {
        Self::rate(self.n_converged, self.n_reps)
    }

    pub fn exact_recovery_rate(&self) -> f64 {
        Self::rate(self.exact, self.n_converged)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationReport {
    pub n: usize,
    pub methods: Vec<PenaltyKind>,
    pub counts: BTreeMap<PenaltyKind, MethodCounts>,
}

impl ReplicationReport {
    pub fn get(&self, kind: PenaltyKind) -> Option<&MethodCounts> {
        self.counts.get(&kind)
    }

    fn label(kind: PenaltyKind) -> &'static str {
        match kind {
            PenaltyKind::None => "ML",
            k => k.as_str(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "n,method,n_reps,n_converged,false_pos,true_neg,false_neg,true_pos,fp_rate,fn_rate,exact_rate\n",
        );
        for &m in &self.methods {
            let c = &self.counts[&m];
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                self.n,
                Self::label(m),
                c.n_reps,
                c.n_converged,
                c.false_pos,
                c.true_neg,
                c.false_neg,
                c.true_pos,
                c.false_positive_rate(),
                c.false_negative_rate(),
                c.exact_recovery_rate()
            ));
        }
        out
    }
}

impl fmt::Display for ReplicationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<16}{:>8}", "", "N")?;
        for &m in &self.methods {
            write!(f, "{:>8}", Self::label(m))?;
        }
        writeln!(f)?;
        let rows: [(&str, fn(&MethodCounts) -> f64); 3] = [
            ("False Positives", MethodCounts::false_positive_rate),
            ("False Negatives", MethodCounts::false_negative_rate),
            ("Converged", MethodCounts::convergence_rate),
        ];
        for (name, rate) in rows {
            write!(f, "{:<16}{:>8}", name, self.n)?;
            for &m in &self.methods {
                write!(f, "{:>8.2}", rate(&self.counts[&m]))?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Nonzero flags for the targets, or `None` when the replication is excluded.
type Verdict = Option<Vec<bool>>;

fn classify(
    design: &SimDesign,
    ram: &RamModel,
    targets: &[usize],
    methods: &[PenaltyKind],
    cfg: &StudyConfig,
    rep: usize,
) -> Vec<Verdict> {
    let Ok(data) = design.moments_rep(rep) else {
        return vec![None; methods.len()];
    };
    let mle = multi_start_fit(ram, &data, &PenaltyConfig::none(), &cfg.opt)
        .ok()
        .filter(|f| f.conv.is_converged());

    methods
        .iter()
        .map(|&kind| -> Verdict {
            if kind == PenaltyKind::None {
                let mle = mle.as_ref()?;
                let se = ml_standard_errors(ram, &mle.theta, &data).ok()?;
                return targets
                    .iter()
                    .map(|&j| {
                        let z = mle.theta[j] / se[j];
                        z.is_finite().then(|| z.abs() > Z_CRIT)
                    })
                    .collect();
            }
            let mut pen = PenaltyConfig::new(kind, 0.0, targets.to_vec())
                .with_alpha(cfg.alpha)
                .with_gamma(cfg.gamma);
            if kind == PenaltyKind::AdaptiveLasso {
                pen = pen.with_weights(alasso_weights(&mle.as_ref()?.theta, targets));
            }
            let mut path = cfg.path.clone();
            if let GridRule::ScaledToLambdaMax { factor } = cfg.grid {
                let lmax = lambda_max(ram, &data, &pen, &cfg.opt).ok()??;
                let top = (factor * lmax).max(path.lambda_start);
                path.jump = if path.n_lambda > 1 {
                    ((top - path.lambda_start) / (path.n_lambda - 1) as f64).max(1e-12)
                } else {
                    1.0
                };
            }
            let result = run_path(ram, &data, &pen, &path, &cfg.opt).ok()?;
            Some(
                targets
                    .iter()
                    .map(|&j| result.final_pars[j].abs() > ZERO_TOL)
                    .collect(),
            )
        })
        .collect()
}

/// Simulate, fit every method, select by the path metric and classify each
/// target parameter as zero or nonzero. ML flags a parameter when its Wald
/// z statistic exceeds [`Z_CRIT`]. Replications where a method fails are
/// excluded from that method's counts.
pub fn replication_study(
    design: &SimDesign,
    methods: &[PenaltyKind],
    cfg: &StudyConfig,
) -> Result<ReplicationReport, SimError> {
    design.validate()?;
    let ram = design.build_model()?;
    let mut targets = Vec::new();
    let mut truth = Vec::new();
    for (name, &value) in &design.true_params {
        let id = ram
            .param_by_name(name)
            .ok_or_else(|| SimError::Design(format!("no parameter named `{name}`")))?;
        targets.push(id);
        truth.push(value);
    }
    // keep targets ascending so they line up with pars_pen
    let mut order: Vec<usize> = (0..targets.len()).collect();
    order.sort_by_key(|&i| targets[i]);
    let targets: Vec<usize> = order.iter().map(|&i| targets[i]).collect();
    let truth: Vec<f64> = order.iter().map(|&i| truth[i]).collect();

    let verdicts: Vec<Vec<Verdict>> = (0..design.n_reps)
        .into_par_iter()
        .map(|rep| classify(design, &ram, &targets, methods, cfg, rep))
        .collect();

    let mut counts = BTreeMap::new();
    for (mi, &m) in methods.iter().enumerate() {
        let mut c = MethodCounts {
            n_reps: design.n_reps,
            ..Default::default()
        };
        for rep in &verdicts {
            let Some(flags) = &rep[mi] else { continue };
            c.n_converged += 1;
            let mut all_right = true;
            for (&nonzero, &t) in flags.iter().zip(&truth) {
                match (t != 0.0, nonzero) {
                    (false, true) => c.false_pos += 1,
                    (false, false) => c.true_neg += 1,
                    (true, false) => c.false_neg += 1,
                    (true, true) => c.true_pos += 1,
                }
                all_right &= (t != 0.0) == nonzero;
            }
            c.exact += all_right as usize;
        }
        counts.insert(m, c);
    }
    Ok(ReplicationReport {
        n: design.n,
        methods: methods.to_vec(),
        counts,
    })
}
