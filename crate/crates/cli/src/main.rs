use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use ppdsnr::conjugate::{NaturalParams, SufficientSummary};
use ppdsnr::scenarios::io::write_rows_to;
use ppdsnr::scenarios::runners::{delta_row, run_clt_check, run_contour, run_linreg_error_curves, run_table};
use ppdsnr::scenarios::{ExpFamKind, Format, GridSpec, Mode, RegressionKind, RunSpec, ScenarioSpec};

#[derive(Parser)]
#[command(name = "ppdsnr", version, about = "SNR analysis and learned importance sampling for predictive posterior densities")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "csv")]
    format: Format,
}

#[derive(Args, Clone, Default)]
struct RunArgs {
    /// JSON file with RunSpec fields; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Samples per naive estimate.
    #[arg(long)]
    k_naive: Option<usize>,
    /// Samples per importance-sampling estimate.
    #[arg(long)]
    k_is: Option<usize>,
    /// Replicates per run (S).
    #[arg(long)]
    replicates: Option<usize>,
    /// Independent outer runs.
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Optimizer iterations for every trained Gaussian.
    #[arg(long)]
    iters: Option<usize>,
    /// Importance samples in the IW-ELBO.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    is_grad_batch: Option<usize>,
    #[arg(long)]
    vi_grad_batch: Option<usize>,
}

impl RunArgs {
    fn spec(&self, seed: Option<u64>) -> Result<RunSpec> {
        let mut spec = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => RunSpec::default(),
        };
        macro_rules! set {
            ($flag:expr, $field:ident) => {
                if let Some(v) = $flag {
                    spec.$field = v;
                }
            };
        }
        set!(self.k_naive, k_naive);
        set!(self.k_is, k_is);
        set!(self.replicates, s);
        set!(self.runs, runs);
        set!(self.lr, learning_rate);
        set!(self.iters, iters);
        set!(self.m, m);
        set!(self.is_grad_batch, is_grad_batch);
        set!(self.vi_grad_batch, vi_grad_batch);
        set!(seed, seed);
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Subcommand)]
enum Command {
    /// log10 SNR contour grid over test-set mean and size for a scalar model.
    Contour {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "normal")]
        model: ExpFamKind,
        #[arg(long, default_value_t = 10.0)]
        train_mean: f64,
        #[arg(long, default_value_t = 100.0)]
        train_size: f64,
        #[arg(long, default_value_t = 0.0)]
        mean_min: f64,
        #[arg(long, default_value_t = 20.0)]
        mean_max: f64,
        #[arg(long, default_value_t = 41)]
        mean_steps: usize,
        #[arg(long, default_value_t = 0.0)]
        size_min: f64,
        #[arg(long, default_value_t = 200.0)]
        size_max: f64,
        #[arg(long, default_value_t = 41)]
        size_steps: usize,
        /// Samples in the naive estimator.
        #[arg(long, default_value_t = 1)]
        k: u64,
    },
    /// Exact δ and naive SNR from summary statistics of a scalar model.
    Delta {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "normal")]
        model: ExpFamKind,
        /// Sum of training sufficient statistics.
        #[arg(long, default_value_t = 1000.0)]
        train_sum: f64,
        #[arg(long, default_value_t = 100.0)]
        train_count: f64,
        #[arg(long, default_value_t = 500.0)]
        test_sum: f64,
        #[arg(long, default_value_t = 100.0)]
        test_count: f64,
        /// Prior τ; the model's default prior when omitted.
        #[arg(long, requires = "prior_nu")]
        prior_tau: Option<f64>,
        #[arg(long, requires = "prior_tau")]
        prior_nu: Option<f64>,
        #[arg(long, default_value_t = 1)]
        k: u64,
    },
    /// Exact multivariate-Normal δ against the Bayesian-CLT approximation.
    CltCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "1,10,100,1000")]
        dims: Vec<usize>,
    },
    /// Naive and LIS estimates for the Normal, Exp and Binomial scenarios.
    ExpfamTable {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_value = "normal,exp,binomial")]
        models: Vec<ExpFamKind>,
        #[arg(long, default_value = "exact")]
        mode: Mode,
    },
    /// Error percentiles of naive and LIS estimates for linear regression.
    LinregCurves {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_value = "baseline,mismatch,testsize,dims")]
        scenarios: Vec<RegressionKind>,
        #[arg(long, value_delimiter = ',', default_value = "1,10,100,1000,10000,100000,1000000")]
        naive_ks: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "1,10,100,1000")]
        is_ks: Vec<usize>,
    },
    /// Naive and LIS estimates for logistic regression under approximate inference.
    LogregTable {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_value = "baseline,mismatch,testsize,dims")]
        scenarios: Vec<RegressionKind>,
    },
}

fn emit<T: Serialize>(rows: &[T], out: Option<&Path>, format: Format) -> Result<()> {
    match out {
        Some(path) => {
            let file = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
            write_rows_to(file, rows, format)?;
        }
        None => write_rows_to(std::io::stdout().lock(), rows, format)?,
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Contour {
            common,
            model,
            train_mean,
            train_size,
            mean_min,
            mean_max,
            mean_steps,
            size_min,
            size_max,
            size_steps,
            k,
        } => {
            let grid = GridSpec {
                train_mean,
                train_size,
                mean_min,
                mean_max,
                mean_steps,
                size_min,
                size_max,
                size_steps,
                k,
            };
            emit(&run_contour(model, &grid)?, common.out.as_deref(), common.format)
        }
        Command::Delta {
            common,
            model,
            train_sum,
            train_count,
            test_sum,
            test_count,
            prior_tau,
            prior_nu,
            k,
        } => {
            let prior = match (prior_tau, prior_nu) {
                (Some(tau), Some(nu)) => NaturalParams::scalar(tau, nu),
                _ => model.default_prior(),
            };
            let train = SufficientSummary::new(vec![train_sum], train_count, 0.0)?;
            let test = SufficientSummary::new(vec![test_sum], test_count, 0.0)?;
            let row = delta_row(&model.model(), &prior, &train, &test, k)?;
            emit(&[row], common.out.as_deref(), common.format)
        }
        Command::CltCheck { common, dims } => {
            emit(&run_clt_check(&dims, common.seed.unwrap_or(0))?, common.out.as_deref(), common.format)
        }
        Command::ExpfamTable {
            common,
            run,
            models,
            mode,
        } => {
            let spec = run.spec(common.seed)?;
            let mut rows = Vec::new();
            for kind in models {
                rows.extend(run_table(&ScenarioSpec::ExpFam(kind), &spec, mode)?);
            }
            emit(&rows, common.out.as_deref(), common.format)
        }
        Command::LinregCurves {
            common,
            run,
            scenarios,
            naive_ks,
            is_ks,
        } => {
            let spec = run.spec(common.seed)?;
            let rows = run_linreg_error_curves(&scenarios, &naive_ks, &is_ks, &spec)?;
            emit(&rows, common.out.as_deref(), common.format)
        }
        Command::LogregTable { common, run, scenarios } => {
            let spec = run.spec(common.seed)?;
            let mut rows = Vec::new();
            for kind in scenarios {
                rows.extend(run_table(&ScenarioSpec::LogReg(kind), &spec, Mode::Approximate)?);
            }
            emit(&rows, common.out.as_deref(), common.format)
        }
    }
}
