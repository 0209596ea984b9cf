use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use sempath::cli::{self, RunConfig};
use sempath::optim::Method;
use sempath::penalty::{PenaltyKind, DEFAULT_ALPHA, DEFAULT_GAMMA};
use sempath::ram::extract_matrices;
use sempath::select::Metric;
use sempath::syntax::parse_model;

#[derive(Parser)]
#[command(name = "sempath", version, about = "Regularized structural equation modeling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TypeArg {
    None,
    Lasso,
    Ridge,
    Enet,
    Alasso,
    Scad,
    Mcp,
}

impl From<TypeArg> for PenaltyKind {
    fn from(t: TypeArg) -> Self {
        match t {
            TypeArg::None => PenaltyKind::None,
            TypeArg::Lasso => PenaltyKind::Lasso,
            TypeArg::Ridge => PenaltyKind::Ridge,
            TypeArg::Enet => PenaltyKind::ElasticNet,
            TypeArg::Alasso => PenaltyKind::AdaptiveLasso,
            TypeArg::Scad => PenaltyKind::Scad,
            TypeArg::Mcp => PenaltyKind::Mcp,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Bic,
    Rmsea,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Auto,
    Grad,
    Qn,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a penalty path and write fits.csv, parameters.csv, trajectory.csv and final.json.
    Fit {
        /// Model file, or model text.
        #[arg(long)]
        model: String,
        /// CSV with a header row (raw data, or a covariance matrix with a .meta.json sidecar).
        #[arg(long)]
        data: PathBuf,
        #[arg(long = "type", value_enum, default_value = "lasso")]
        kind: TypeArg,
        #[arg(long, default_value_t = 0.0)]
        lambda_start: f64,
        #[arg(long, default_value_t = 20)]
        n_lambda: usize,
        #[arg(long, default_value_t = 0.05)]
        jump: f64,
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
        #[arg(long, default_value_t = DEFAULT_GAMMA)]
        gamma: f64,
        /// Labels, parameter names, `all-directed`, 1-based ids or ranges such as `1:7`.
        #[arg(long)]
        pars_pen: Option<String>,
        #[arg(long, value_enum, default_value = "bic")]
        metric: MetricArg,
        /// Data evaluated at every fit without refitting.
        #[arg(long)]
        holdout: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "auto")]
        method: MethodArg,
        #[arg(long, default_value_t = 5000)]
        max_iter: usize,
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
        #[arg(long, default_value_t = 1)]
        n_starts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Fit every λ from the default start, in parallel.
        #[arg(long)]
        cold_start: bool,
        /// Model intercepts and latent means.
        #[arg(long)]
        meanstructure: bool,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Write penalty values of all kinds over a θ range as CSV.
    Curves {
        #[arg(long, default_value_t = 0.5)]
        lambda: f64,
        #[arg(long, default_value_t = DEFAULT_GAMMA)]
        gamma: f64,
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
        #[arg(long, default_value_t = -3.0, allow_hyphen_values = true)]
        from: f64,
        #[arg(long, default_value_t = 3.0, allow_hyphen_values = true)]
        to: f64,
        #[arg(long, default_value_t = 601)]
        points: usize,
        #[arg(long, default_value = "penalty_curves.csv")]
        out: PathBuf,
    },
    /// Print the A, S and F matrices with parameter numbers.
    Matrices {
        #[arg(long)]
        model: String,
        /// Optional data file fixing the observed-variable order.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        meanstructure: bool,
    },
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("SEMPATH_THREADS") {
        let n: usize = v.parse().context("SEMPATH_THREADS must be a positive integer")?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .context("configuring thread pool")?;
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<i32> {
    configure_threads()?;
    match cli.command {
        Command::Fit {
            model,
            data,
            kind,
            lambda_start,
            n_lambda,
            jump,
            alpha,
            gamma,
            pars_pen,
            metric,
            holdout,
            method,
            max_iter,
            tol,
            n_starts,
            seed,
            cold_start,
            meanstructure,
            out,
        } => {
            let cfg = RunConfig {
                model,
                data,
                kind: kind.into(),
                lambda_start,
                n_lambda,
                jump,
                alpha,
                gamma,
                pars_pen,
                metric: match metric {
                    MetricArg::Bic => Metric::Bic,
                    MetricArg::Rmsea => Metric::Rmsea,
                },
                holdout,
                method: match method {
                    MethodArg::Auto => Method::Auto,
                    MethodArg::Grad => Method::GradientProx,
                    MethodArg::Qn => Method::QuasiNewtonProx,
                },
                max_iter,
                tol,
                n_starts,
                seed,
                out,
                warm_start: !cold_start,
                mean_structure: meanstructure,
            };
            let outcome = cli::run(&cfg)?;
            if let Some(path) = &outcome.path {
                println!(
                    "selected lambda {} ({} of {} fits converged)",
                    path.final_lambda(),
                    path.n_converged(),
                    path.fits.len()
                );
            }
            Ok(outcome.exit_code)
        }
        Command::Curves {
            lambda,
            gamma,
            alpha,
            from,
            to,
            points,
            out,
        } => {
            cli::emit_penalty_curves(lambda, gamma, alpha, (from, to), points, &out)?;
            Ok(0)
        }
        Command::Matrices {
            model,
            data,
            meanstructure,
        } => {
            let text = cli::read_model_text(&model)?;
            let ram = match data {
                Some(path) => {
                    let loaded = cli::load_data(&path)?;
                    cli::compile_model(&text, loaded.moments.names(), meanstructure)?.1
                }
                None => {
                    let spec = parse_model(&text)?;
                    let order = spec.observed_vars.clone();
                    cli::compile_model(&text, &order, meanstructure)?.1
                }
            };
            print!("{}", extract_matrices(&ram));
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
