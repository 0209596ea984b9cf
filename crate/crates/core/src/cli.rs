//! Command-line front end: data loading, penalty-set resolution, path runs and
//! artifact writing.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{CovDivisor, SampleMoments};
use crate::optim::{multi_start_fit, Method, OptimizerConfig};
use crate::penalty::{alasso_weights, scalar_penalty, PenaltyConfig, PenaltyKind};
use crate::ram::{build_ram, RamModel};
use crate::select::{run_path, Metric, PathConfig, PathError, PathResult, PathRow};
use crate::syntax::{parse_model, validate_spec, ModelSpec, Severity};

/// Exit code when no fit on the path converged.
pub const EXIT_NO_CONVERGENCE: i32 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Path to a model file, or the model text itself.
    pub model: String,
    pub data: PathBuf,
    pub kind: PenaltyKind,
    pub lambda_start: f64,
    pub n_lambda: usize,
    pub jump: f64,
    pub alpha: f64,
    pub gamma: f64,
    /// Penalty-set selector; `None` penalizes all directed effects.
    pub pars_pen: Option<String>,
    pub metric: Metric,
    pub holdout: Option<PathBuf>,
    pub method: Method,
    pub max_iter: usize,
    pub tol: f64,
    pub n_starts: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub warm_start: bool,
    pub mean_structure: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: String::new(),
            data: PathBuf::new(),
            kind: PenaltyKind::Lasso,
            lambda_start: 0.0,
            n_lambda: 20,
            jump: 0.05,
            alpha: crate::penalty::DEFAULT_ALPHA,
            gamma: crate::penalty::DEFAULT_GAMMA,
            pars_pen: None,
            metric: Metric::Bic,
            holdout: None,
            method: Method::Auto,
            max_iter: OptimizerConfig::default().max_iter,
            tol: OptimizerConfig::default().tol,
            n_starts: 1,
            seed: 0,
            out: PathBuf::from("."),
            warm_start: true,
            mean_structure: false,
        }
    }
}

/// Sidecar describing a covariance-matrix CSV, stored at `<data>.meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceMeta {
    pub kind: String,
    pub n: usize,
    #[serde(default)]
    pub means: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedData {
    pub moments: SampleMoments,
    /// Rows removed by listwise deletion.
    pub dropped_rows: usize,
}

pub fn meta_path(data: &Path) -> PathBuf {
    let mut s = data.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn is_missing(cell: &str) -> bool {
    matches!(cell.trim(), "" | "NA" | "NaN" | "nan" | ".")
}

/// Read a CSV with a header row. Raw rows are reduced to moments (divisor N)
/// after listwise deletion; with a `<path>.meta.json` sidecar of kind
/// `covariance` the rows are taken as the covariance matrix itself.
pub fn load_data(path: &Path) -> Result<LoadedData> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let names: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if names.is_empty() {
        bail!("{}: empty header", path.display());
    }
    let meta = meta_path(path);
    let meta: Option<CovarianceMeta> = if meta.exists() {
        let text = fs::read_to_string(&meta).with_context(|| format!("reading {}", meta.display()))?;
        Some(serde_json::from_str(&text).with_context(|| format!("parsing {}", meta.display()))?)
    } else {
        None
    };

    let p = names.len();
    let mut values = Vec::new();
    let mut n_rows = 0;
    let mut dropped = 0;
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = i + 2;
        if record.len() != p {
            bail!("{}:{line}: expected {p} fields, found {}", path.display(), record.len());
        }
        if record.iter().any(is_missing) {
            if meta.is_some() {
                bail!("{}:{line}: missing cell in covariance matrix", path.display());
            }
            dropped += 1;
            continue;
        }
        for (j, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                anyhow!("{}:{line}: non-numeric cell `{cell}` in column `{}`", path.display(), names[j])
            })?;
            values.push(v);
        }
        n_rows += 1;
    }

    let moments = match meta {
        Some(m) => {
            if m.kind != "covariance" {
                bail!("unsupported data kind `{}` in sidecar", m.kind);
            }
            if n_rows != p {
                bail!("covariance input must be {p}x{p}, found {n_rows} rows");
            }
            let cov = DMatrix::from_row_slice(p, p, &values);
            let means = m.means.map(DVector::from_vec);
            SampleMoments::new(cov, means, m.n, names)?
        }
        None => {
            let rows = DMatrix::from_row_slice(n_rows, p, &values);
            SampleMoments::from_raw(&rows, names, CovDivisor::N)?
        }
    };
    Ok(LoadedData {
        moments,
        dropped_rows: dropped,
    })
}

/// Model text from a file path, or the argument itself when it is not a file.
pub fn read_model_text(model: &str) -> Result<String> {
    let path = Path::new(model);
    if !model.contains('\n') && path.is_file() {
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
    } else if model.contains('~') {
        Ok(model.to_string())
    } else {
        bail!("`{model}` is neither a readable file nor model text")
    }
}

/// Resolve a selector into sorted 0-based parameter ids.
///
/// Tokens are comma or whitespace separated: a label from the model syntax,
/// a parameter name such as `f1 -> A1`, `all-directed`, a 1-based id, or an
/// inclusive 1-based range `a:b`.
pub fn resolve_pars_pen(selector: Option<&str>, ram: &RamModel) -> Result<Vec<usize>> {
    let Some(selector) = selector else {
        return Ok(ram.directed_params());
    };
    let q = ram.n_params();
    let mut out = Vec::new();
    let check = |id: usize| -> Result<usize> {
        if id == 0 || id > q {
            bail!("parameter id {id} outside 1..={q}");
        }
        Ok(id - 1)
    };
    for token in selector.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        if token == "all-directed" {
            out.extend(ram.directed_params());
        } else if ram.param_by_label(token).is_some() {
            out.extend(
                ram.params()
                    .iter()
                    .filter(|p| p.label.as_deref() == Some(token))
                    .map(|p| p.id),
            );
        } else if let Some(id) = ram.param_by_name(token) {
            out.push(id);
        } else if let Some((a, b)) = token.split_once(':') {
            let a: usize = a.trim().parse().with_context(|| format!("bad range `{token}`"))?;
            let b: usize = b.trim().parse().with_context(|| format!("bad range `{token}`"))?;
            if a > b {
                bail!("empty range `{token}`");
            }
            for id in a..=b {
                out.push(check(id)?);
            }
        } else if let Ok(id) = token.parse::<usize>() {
            out.push(check(id)?);
        } else {
            let ids: Vec<&str> = token.split_whitespace().collect();
            if ids.len() > 1 && ids.iter().all(|t| t.parse::<usize>().is_ok()) {
                for t in ids {
                    out.push(check(t.parse().unwrap())?);
                }
            } else {
                bail!("`{token}` is not a label, parameter name or id");
            }
        }
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// Parse and compile a model against the variables present in the data.
pub fn compile_model(text: &str, data_names: &[String], mean_structure: bool) -> Result<(ModelSpec, RamModel)> {
    let spec = parse_model(text)?.with_mean_structure(mean_structure);
    let report = validate_spec(&spec, Some(data_names));
    for finding in &report.findings {
        if finding.severity == Severity::Warning {
            eprintln!("{finding}");
        }
    }
    if report.has_errors() {
        let msgs: Vec<String> = report.findings.iter().map(|f| f.to_string()).collect();
        bail!("model validation failed:\n  {}", msgs.join("\n  "));
    }
    let ram = build_ram(&spec, data_names)?;
    Ok((spec, ram))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FinalParameter {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub penalty: String,
    pub n_regularized: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub lowest_fit_lambda: f64,
    pub metric: String,
    pub n_lambda: usize,
    pub n_converged: usize,
    pub n_obs: usize,
    pub dropped_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FinalReport {
    pub lambda: f64,
    pub final_index: usize,
    pub final_pars: Vec<FinalParameter>,
    pub summary: Summary,
}

/// Result of [`run`]: the process exit code and the path (when one was fit).
#[derive(Debug)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub path: Option<PathResult>,
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn fits_csv(rows: &[PathRow], names: &[String], holdout: bool) -> String {
    let mut out = String::from("lambda,conv,f_regsem");
    for n in names {
        let _ = write!(out, ",{n}");
    }
    if holdout {
        for n in names {
            let _ = write!(out, ",test_{n}");
        }
    }
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{},{},{}", num(r.lambda), r.conv, num(r.f_regsem));
        for n in names {
            let _ = write!(out, ",{}", num(r.indices.get(n).copied().unwrap_or(f64::NAN)));
        }
        if let Some(h) = &r.holdout {
            for n in names {
                let _ = write!(out, ",{}", num(h.get(n).copied().unwrap_or(f64::NAN)));
            }
        }
        out.push('\n');
    }
    out
}

fn matrix_csv(header: &[String], rows: impl Iterator<Item = Vec<f64>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(|&v| num(v)))?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

fn write_artifacts(
    out: &Path,
    result_rows: &[PathRow],
    parameters: &[Vec<f64>],
    names: &[String],
    param_names: &[String],
    pars_pen: &[usize],
    holdout: bool,
) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("fits.csv"), fits_csv(result_rows, names, holdout))?;
    fs::write(
        out.join("parameters.csv"),
        matrix_csv(param_names, parameters.iter().cloned())?,
    )?;
    let mut header = vec!["lambda".to_string()];
    header.extend(pars_pen.iter().map(|&j| param_names[j].clone()));
    let traj = result_rows.iter().zip(parameters).map(|(r, theta)| {
        std::iter::once(r.lambda)
            .chain(pars_pen.iter().map(|&j| theta[j]))
            .collect()
    });
    fs::write(out.join("trajectory.csv"), matrix_csv(&header, traj)?)?;
    Ok(())
}

/// Fit the penalty path described by `cfg` and write `fits.csv`,
/// `parameters.csv`, `trajectory.csv` and (when a fit converged) `final.json`
/// to `cfg.out`.
pub fn run(cfg: &RunConfig) -> Result<RunOutcome> {
    let loaded = load_data(&cfg.data)?;
    if loaded.dropped_rows > 0 {
        eprintln!("note: dropped {} rows with missing values", loaded.dropped_rows);
    }
    let text = read_model_text(&cfg.model)?;
    let (_, ram) = compile_model(&text, loaded.moments.names(), cfg.mean_structure)?;
    let data = loaded.moments.select(&ram.observed_names())?;
    if cfg.mean_structure && data.means().is_none() {
        bail!("a mean structure needs sample means");
    }
    let holdout = match &cfg.holdout {
        Some(p) => Some(load_data(p)?.moments.select(&ram.observed_names())?),
        None => None,
    };

    let opt = OptimizerConfig {
        method: cfg.method,
        max_iter: cfg.max_iter,
        tol: cfg.tol,
        n_starts: cfg.n_starts,
        seed: cfg.seed,
        ..Default::default()
    };
    let (pen, path) = if cfg.kind == PenaltyKind::None {
        (
            PenaltyConfig::none(),
            PathConfig {
                n_lambda: 1,
                jump: 1.0,
                lambda_start: 0.0,
                metric: cfg.metric,
                holdout: holdout.clone(),
                warm_start: cfg.warm_start,
                fit_ret: Vec::new(),
            },
        )
    } else {
        let pars_pen = resolve_pars_pen(cfg.pars_pen.as_deref(), &ram)?;
        if pars_pen.is_empty() {
            bail!("the penalty selector matched no parameters");
        }
        let mut pen = PenaltyConfig::new(cfg.kind, 0.0, pars_pen)
            .with_alpha(cfg.alpha)
            .with_gamma(cfg.gamma);
        if cfg.kind == PenaltyKind::AdaptiveLasso {
            let mle = multi_start_fit(&ram, &data, &PenaltyConfig::none(), &opt)?;
            if !mle.conv.is_converged() {
                bail!("maximum-likelihood fit for adaptive-lasso weights did not converge");
            }
            let weights = alasso_weights(&mle.theta, &pen.pars_pen);
            pen = pen.with_weights(weights);
        }
        (
            pen,
            PathConfig {
                n_lambda: cfg.n_lambda,
                jump: cfg.jump,
                lambda_start: cfg.lambda_start,
                metric: cfg.metric,
                holdout: holdout.clone(),
                warm_start: cfg.warm_start,
                fit_ret: Vec::new(),
            },
        )
    };

    let param_names = ram.param_names();
    let index_names: Vec<String> = path.index_names();
    match run_path(&ram, &data, &pen, &path, &opt) {
        Ok(result) => {
            write_artifacts(
                &cfg.out,
                &result.fits,
                &result.parameters,
                &result.index_names,
                &param_names,
                &pen.pars_pen,
                holdout.is_some(),
            )?;
            let grid = path.grid();
            let lowest_fit = result
                .fits
                .iter()
                .filter(|r| r.conv == 0)
                .min_by(|a, b| a.indices["f_ml"].total_cmp(&b.indices["f_ml"]))
                .map(|r| r.lambda)
                .unwrap_or(f64::NAN);
            let report = FinalReport {
                lambda: result.final_lambda(),
                final_index: result.final_index,
                final_pars: param_names
                    .iter()
                    .zip(&result.final_pars)
                    .map(|(n, &v)| FinalParameter {
                        name: n.clone(),
                        value: v,
                    })
                    .collect(),
                summary: Summary {
                    penalty: cfg.kind.as_str().to_string(),
                    n_regularized: pen.pars_pen.len(),
                    lambda_min: grid[0],
                    lambda_max: *grid.last().unwrap(),
                    lowest_fit_lambda: lowest_fit,
                    metric: cfg.metric.as_str().to_string(),
                    n_lambda: grid.len(),
                    n_converged: result.n_converged(),
                    n_obs: data.n(),
                    dropped_rows: loaded.dropped_rows,
                },
            };
            fs::write(
                cfg.out.join("final.json"),
                serde_json::to_string_pretty(&report)? + "\n",
            )?;
            Ok(RunOutcome {
                exit_code: 0,
                path: Some(result),
            })
        }
        Err(PathError::NoneConverged { fits, parameters }) => {
            write_artifacts(
                &cfg.out,
                &fits,
                &parameters,
                &index_names,
                &param_names,
                &pen.pars_pen,
                holdout.is_some(),
            )?;
            eprintln!("error: no fit on the penalty path converged");
            Ok(RunOutcome {
                exit_code: EXIT_NO_CONVERGENCE,
                path: None,
            })
        }
        Err(e) => Err(e.into()),
    }
}

/// Penalty values of all six kinds on `n_points` evenly spaced θ in `[lo, hi]`.
/// The adaptive lasso uses weight 1. Columns follow [`PenaltyKind::ALL`].
pub fn penalty_curves(lambda: f64, gamma: f64, alpha: f64, lo: f64, hi: f64, n_points: usize) -> Vec<(f64, [f64; 6])> {
    let n = n_points.max(2);
    (0..n)
        .map(|i| {
            let theta = lo + (hi - lo) * i as f64 / (n - 1) as f64;
            let mut vals = [0.0; 6];
            for (v, &kind) in vals.iter_mut().zip(PenaltyKind::ALL.iter()) {
                *v = scalar_penalty(kind, theta, lambda, alpha, gamma, 1.0);
            }
            (theta, vals)
        })
        .collect()
}

/// Write [`penalty_curves`] as CSV with columns `theta` and one per kind.
pub fn emit_penalty_curves(
    lambda: f64,
    gamma: f64,
    alpha: f64,
    range: (f64, f64),
    n_points: usize,
    out_path: &Path,
) -> Result<Vec<(f64, [f64; 6])>> {
    if !range.0.is_finite() || !range.1.is_finite() || range.0 >= range.1 {
        bail!("curve range must be finite with lo < hi");
    }
    let curves = penalty_curves(lambda, gamma, alpha, range.0, range.1, n_points);
    let mut header = vec!["theta".to_string()];
    header.extend(PenaltyKind::ALL.iter().map(|k| k.as_str().to_string()));
    let csv = matrix_csv(
        &header,
        curves.iter().map(|(t, v)| std::iter::once(*t).chain(v.iter().copied()).collect()),
    )?;
    if let Some(dir) = out_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(out_path, csv).with_context(|| format!("writing {}", out_path.display()))?;
    Ok(curves)
}
