//! Experiment runners binding generators to estimators and analytics.

use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::generators::{gen_linreg, gen_logreg, ExpFamKind, ExpFamScenario, LinRegScenario, LogRegScenario, RegressionKind};
use super::io::{tagged_f64, tagged_opt_f64};
use crate::conjugate::{log_ppd_exact, posterior_params, summarize, ConjugateModel, NaturalParams, PosteriorSampler, SufficientSummary};
use crate::error::{Error, Result};
use crate::estimators::{
    empirical_report, is_batch, is_log_rk_prefixes, naive_batch, naive_log_rk_prefixes, replicate, train_lis_proposal,
    ConjugateSource, EstimatorReport, LisInit, LoglikStream, RotatedLinRegLoglik, SampledLoglik,
};
use crate::gaussian_linreg::{delta_exact_linreg, log_ppd_exact_linreg, posterior, GaussianDist};
use crate::numeric::{mean_and_sd, quantile};
use crate::rng::{derive_seed, substream};
use crate::snr::{contour_grid, delta_approx, delta_clt, delta_exact, log10_snr_from_delta};
use crate::targets::{
    conjugate_density_target, conjugate_joint_target, conjugate_loglik_target, logreg_joint_target, DiffTarget,
    LinRegLoglik, LisTarget, LogisticLoglik, Transform,
};
use crate::vi::{laplace_init, train, FullRankGaussian, Objective, TrainConfig};

const LABEL_RUN: u64 = 10;
const LABEL_QD: u64 = 11;
const LABEL_NAIVE: u64 = 12;
const LABEL_LIS: u64 = 13;

/// Estimation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSpec {
    pub k_naive: usize,
    pub k_is: usize,
    /// Replicates per run.
    pub s: usize,
    /// Independent outer runs.
    pub runs: usize,
    pub learning_rate: f64,
    pub iters: usize,
    /// Importance samples in the IW-ELBO.
    pub m: usize,
    /// Gradient copies averaged per IW-ELBO step.
    pub is_grad_batch: usize,
    /// Gradient copies averaged per ELBO step.
    pub vi_grad_batch: usize,
    pub seed: u64,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            k_naive: 1_000_000,
            k_is: 1000,
            s: 1000,
            runs: 10,
            learning_rate: 1e-3,
            iters: 1000,
            m: 16,
            is_grad_batch: 8,
            vi_grad_batch: 16,
            seed: 0,
        }
    }
}

impl RunSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("k_naive", self.k_naive),
            ("k_is", self.k_is),
            ("runs", self.runs),
            ("m", self.m),
            ("is_grad_batch", self.is_grad_batch),
            ("vi_grad_batch", self.vi_grad_batch),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Argument(format!("{name} must be positive")));
            }
        }
        if self.s < 2 {
            return Err(Error::Argument(format!("s must be at least 2, got {}", self.s)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Argument(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        Ok(())
    }

    pub fn vi_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            iters: self.iters,
            learning_rate: self.learning_rate,
            m: 1,
            grad_batch: self.vi_grad_batch,
            seed,
        }
    }

    pub fn lis_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            iters: self.iters,
            learning_rate: self.learning_rate,
            m: self.m,
            grad_batch: self.is_grad_batch,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Estimate the PPD of the exact posterior.
    Exact,
    /// Estimate the PPD of an ELBO-trained Gaussian `q_D`.
    Approximate,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Exact => "exact",
            Mode::Approximate => "approximate",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Mode::Exact),
            "approximate" => Ok(Mode::Approximate),
            _ => Err(Error::Argument(format!("unknown mode {s:?}; expected exact or approximate"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioSpec {
    ExpFam(ExpFamKind),
    LinReg(RegressionKind),
    LogReg(RegressionKind),
}

impl ScenarioSpec {
    pub fn name(&self) -> String {
        match self {
            ScenarioSpec::ExpFam(k) => k.name().to_string(),
            ScenarioSpec::LinReg(k) => format!("linreg-{}", k.name()),
            ScenarioSpec::LogReg(k) => format!("logreg-{}", k.name()),
        }
    }
}

/// Everything needed to run both estimators on one scenario.
pub struct Evaluation {
    pub name: String,
    pub naive: Box<dyn LoglikStream>,
    /// Density of the posterior being evaluated, on the unconstrained space.
    pub base: Arc<dyn DiffTarget>,
    pub loglik: Arc<dyn DiffTarget>,
    /// The posterior as a Gaussian, when it is one.
    pub q_gauss: Option<FullRankGaussian>,
    pub log_ppd: Option<f64>,
    pub delta: Option<f64>,
}

impl Evaluation {
    pub fn lis_init(&self) -> LisInit {
        LisInit::Select(self.q_gauss.clone())
    }

    /// Trains a LIS proposal with the given seed.
    pub fn train_lis(&self, spec: &RunSpec, seed: u64) -> Result<(LisTarget, FullRankGaussian)> {
        train_lis_proposal(self.base.clone(), self.loglik.clone(), &self.lis_init(), &spec.lis_config(seed))
    }
}

fn gaussian_q(dist: &GaussianDist) -> Result<FullRankGaussian> {
    FullRankGaussian::from_mean_chol(dist.mean.clone(), &dist.chol)
}

fn train_q_d<T: DiffTarget>(joint: &T, spec: &RunSpec) -> Result<FullRankGaussian> {
    let seed = derive_seed(spec.seed, &[LABEL_QD]);
    let init = laplace_init(joint, seed);
    Ok(train(joint, &init, Objective::Elbo, &spec.vi_config(seed))?.model)
}

pub fn expfam_evaluation(scenario: &ExpFamScenario, mode: Mode, spec: &RunSpec) -> Result<Evaluation> {
    let model = scenario.model;
    let transform = Transform::for_model(&model);
    let loglik: Arc<dyn DiffTarget> = Arc::new(conjugate_loglik_target(&model, &scenario.test));
    let name = scenario.kind.name().to_string();
    match mode {
        Mode::Exact => {
            let xi_d = posterior_params(&scenario.prior, &scenario.train);
            let source = ConjugateSource::new(PosteriorSampler::new(&model, &xi_d)?, transform);
            let q_gauss = match model {
                ConjugateModel::NormalKnownVar { sigma2, dim } => Some(FullRankGaussian::from_mean_cov(
                    DVector::from_iterator(dim, xi_d.tau.iter().map(|t| t / xi_d.nu)),
                    &(nalgebra::DMatrix::identity(dim, dim) * (sigma2 / xi_d.nu)),
                )?),
                _ => None,
            };
            Ok(Evaluation {
                name,
                naive: Box::new(SampledLoglik {
                    source,
                    loglik: loglik.clone(),
                }),
                base: Arc::new(conjugate_density_target(&model, &xi_d)?),
                loglik,
                q_gauss,
                log_ppd: Some(log_ppd_exact(&model, &scenario.prior, &scenario.train, &scenario.test)?),
                delta: Some(delta_exact(&model, &scenario.prior, &scenario.train, &scenario.test)?.delta),
            })
        }
        Mode::Approximate => {
            let joint = conjugate_joint_target(&model, &scenario.prior, &scenario.train)?;
            let q = train_q_d(&joint, spec)?;
            // A Gaussian q for the Normal model is itself a conjugate-family member.
            let (log_ppd, delta) = match model {
                ConjugateModel::NormalKnownVar { sigma2, dim: 1 } => {
                    let var = q.covariance()[(0, 0)];
                    let nu = sigma2 / var;
                    let eta = NaturalParams::scalar(q.mean()[0] * nu, nu);
                    let empty = SufficientSummary::empty(1);
                    (
                        Some(log_ppd_exact(&model, &eta, &empty, &scenario.test)?),
                        Some(delta_approx(&model, &eta, &scenario.test)?.delta),
                    )
                }
                _ => (None, None),
            };
            Ok(Evaluation {
                name,
                naive: Box::new(SampledLoglik {
                    source: q.clone(),
                    loglik: loglik.clone(),
                }),
                base: Arc::new(q.clone()),
                loglik,
                q_gauss: Some(q),
                log_ppd,
                delta,
            })
        }
    }
}

pub fn linreg_evaluation(scenario: &LinRegScenario, mode: Mode, spec: &RunSpec) -> Result<Evaluation> {
    let problem = &scenario.problem;
    let test = problem.test_gram(&scenario.x_test, &scenario.y_test)?;
    let loglik: Arc<dyn DiffTarget> = Arc::new(LinRegLoglik::new(test.clone(), problem.sigma2));
    let name = format!("linreg-{}", scenario.kind.name());
    match mode {
        Mode::Exact => {
            let post = posterior(problem)?;
            let q = gaussian_q(&post)?;
            Ok(Evaluation {
                name,
                naive: Box::new(RotatedLinRegLoglik::new(&post, &test, problem.sigma2)),
                base: Arc::new(q.clone()),
                loglik,
                q_gauss: Some(q),
                log_ppd: Some(log_ppd_exact_linreg(problem, &scenario.x_test, &scenario.y_test)?),
                delta: Some(delta_exact_linreg(problem, &scenario.x_test, &scenario.y_test)?),
            })
        }
        Mode::Approximate => {
            let prior = crate::targets::GaussianPrior::new(problem.prior.mean.clone(), problem.prior.covariance())?;
            let joint = crate::targets::SumTarget::new(prior, LinRegLoglik::new(problem.gram().clone(), problem.sigma2));
            let q = train_q_d(&joint, spec)?;
            let q_dist = GaussianDist::new(q.mean().clone(), q.chol().clone())?;
            Ok(Evaluation {
                name,
                naive: Box::new(RotatedLinRegLoglik::new(&q_dist, &test, problem.sigma2)),
                base: Arc::new(q.clone()),
                loglik,
                log_ppd: Some(crate::gaussian_linreg::log_evidence_gram(&q_dist, &test, problem.sigma2)?),
                q_gauss: Some(q),
                delta: None,
            })
        }
    }
}

pub fn logreg_evaluation(scenario: &LogRegScenario, mode: Mode, spec: &RunSpec) -> Result<Evaluation> {
    if mode == Mode::Exact {
        return Err(Error::Argument(
            "logistic regression has no exact posterior; use approximate mode".into(),
        ));
    }
    let d = scenario.x.ncols();
    let joint = logreg_joint_target(
        scenario.x.clone(),
        scenario.y.clone(),
        DVector::zeros(d),
        nalgebra::DMatrix::identity(d, d),
    )?;
    let q = train_q_d(&joint, spec)?;
    let loglik: Arc<dyn DiffTarget> = Arc::new(LogisticLoglik::new(
        scenario.x.clone(),
        scenario.y_test.clone(),
        scenario.copies as f64,
    )?);
    Ok(Evaluation {
        name: format!("logreg-{}", scenario.kind.name()),
        naive: Box::new(SampledLoglik {
            source: q.clone(),
            loglik: loglik.clone(),
        }),
        base: Arc::new(q.clone()),
        loglik,
        q_gauss: Some(q),
        log_ppd: None,
        delta: None,
    })
}

pub fn evaluation(scenario: &ScenarioSpec, mode: Mode, spec: &RunSpec) -> Result<Evaluation> {
    match *scenario {
        ScenarioSpec::ExpFam(k) => expfam_evaluation(&ExpFamScenario::generate(k, spec.seed)?, mode, spec),
        ScenarioSpec::LinReg(k) => linreg_evaluation(&gen_linreg(k, spec.seed)?, mode, spec),
        ScenarioSpec::LogReg(k) => logreg_evaluation(&gen_logreg(k, spec.seed)?, mode, spec),
    }
}

/// One estimator's results over the outer runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub scenario: String,
    pub mode: String,
    pub estimator: String,
    pub k: usize,
    pub s: usize,
    pub runs: usize,
    #[serde(with = "tagged_f64")]
    pub mean_log_r: f64,
    #[serde(with = "tagged_opt_f64")]
    pub sd_mean_log_r: Option<f64>,
    #[serde(with = "tagged_f64")]
    pub log10_snr: f64,
    #[serde(with = "tagged_opt_f64")]
    pub sd_log10_snr: Option<f64>,
    /// Closed-form log PPD, when available.
    #[serde(with = "tagged_opt_f64")]
    pub log_ppd: Option<f64>,
    #[serde(with = "tagged_opt_f64")]
    pub delta: Option<f64>,
    /// Closed-form log10 SNR of the naive estimator at this K.
    #[serde(with = "tagged_opt_f64")]
    pub log10_snr_closed: Option<f64>,
}

fn summarize_runs(values: &[f64]) -> (f64, Option<f64>) {
    if values.iter().any(|v| !v.is_finite()) {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        return (mean, None);
    }
    if values.len() < 2 {
        return (values[0], None);
    }
    let (m, sd) = mean_and_sd(values);
    (m, Some(sd))
}

/// Per-run reports for both estimators.
#[derive(Debug, Clone)]
pub struct TableRuns {
    pub naive: Vec<EstimatorReport>,
    pub lis: Vec<EstimatorReport>,
}

pub fn run_evaluation(eval: &Evaluation, spec: &RunSpec) -> Result<TableRuns> {
    spec.validate()?;
    let mut naive = Vec::with_capacity(spec.runs);
    let mut lis = Vec::with_capacity(spec.runs);
    for run in 0..spec.runs {
        let run_seed = derive_seed(spec.seed, &[LABEL_RUN, run as u64]);
        let batch = naive_batch(eval.naive.as_ref(), spec.k_naive, spec.s, derive_seed(run_seed, &[LABEL_NAIVE]))?;
        naive.push(empirical_report(&batch)?);
        let lis_seed = derive_seed(run_seed, &[LABEL_LIS]);
        let (target, r) = eval.train_lis(spec, lis_seed)?;
        let batch = is_batch(&r, &target, spec.k_is, spec.s, lis_seed)?;
        lis.push(empirical_report(&batch)?);
    }
    Ok(TableRuns { naive, lis })
}

pub fn table_rows(eval: &Evaluation, mode: Mode, spec: &RunSpec, runs: &TableRuns) -> Vec<TableRow> {
    let row = |estimator: &str, k: usize, reports: &[EstimatorReport]| {
        let (mean_log_r, sd_mean_log_r) = summarize_runs(&reports.iter().map(|r| r.mean_log_r).collect::<Vec<_>>());
        let (log10_snr, sd_log10_snr) = summarize_runs(&reports.iter().map(|r| r.log10_snr_hat).collect::<Vec<_>>());
        let log10_snr_closed = match eval.delta {
            Some(d) if d > 0.0 => log10_snr_from_delta(d, k as u64).ok(),
            Some(_) => Some(f64::INFINITY),
            None => None,
        };
        TableRow {
            scenario: eval.name.clone(),
            mode: mode.name().to_string(),
            estimator: estimator.to_string(),
            k,
            s: spec.s,
            runs: spec.runs,
            mean_log_r,
            sd_mean_log_r,
            log10_snr,
            sd_log10_snr,
            log_ppd: eval.log_ppd,
            delta: eval.delta,
            log10_snr_closed: if estimator == "naive" { log10_snr_closed } else { None },
        }
    };
    vec![
        row("naive", spec.k_naive, &runs.naive),
        row("lis", spec.k_is, &runs.lis),
    ]
}

/// Naive and LIS rows for one scenario, each averaged over `spec.runs`
/// independent runs of `spec.s` replicates.
pub fn run_table(scenario: &ScenarioSpec, spec: &RunSpec, mode: Mode) -> Result<Vec<TableRow>> {
    spec.validate()?;
    let eval = evaluation(scenario, mode, spec)?;
    let runs = run_evaluation(&eval, spec)?;
    Ok(table_rows(&eval, mode, spec, &runs))
}

/// Contour grid over test means and sizes for a conjugate model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub train_mean: f64,
    pub train_size: f64,
    pub mean_min: f64,
    pub mean_max: f64,
    pub mean_steps: usize,
    pub size_min: f64,
    pub size_max: f64,
    pub size_steps: usize,
    pub k: u64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            train_mean: 10.0,
            train_size: 100.0,
            mean_min: 0.0,
            mean_max: 20.0,
            mean_steps: 41,
            size_min: 0.0,
            size_max: 200.0,
            size_steps: 41,
            k: 1,
        }
    }
}

fn linspace(lo: f64, hi: f64, steps: usize) -> Result<Vec<f64>> {
    if steps == 0 || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Argument(format!("invalid grid [{lo}, {hi}] with {steps} steps")));
    }
    if steps == 1 {
        return Ok(vec![lo]);
    }
    Ok((0..steps).map(|i| lo + (hi - lo) * i as f64 / (steps - 1) as f64).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContourRow {
    pub test_mean: f64,
    pub test_size: f64,
    #[serde(with = "tagged_opt_f64")]
    pub delta: Option<f64>,
    #[serde(with = "tagged_opt_f64")]
    pub log10_snr: Option<f64>,
}

pub fn run_contour(kind: ExpFamKind, grid: &GridSpec) -> Result<Vec<ContourRow>> {
    let model = kind.model();
    let train = SufficientSummary::new(vec![grid.train_mean * grid.train_size], grid.train_size, 0.0)?;
    let means = linspace(grid.mean_min, grid.mean_max, grid.mean_steps)?;
    let sizes = linspace(grid.size_min, grid.size_max, grid.size_steps)?;
    if grid.k == 0 {
        return Err(Error::Argument("K must be at least 1".into()));
    }
    Ok(contour_grid(&model, &train, &kind.default_prior(), &means, &sizes, grid.k)
        .into_iter()
        .map(|c| ContourRow {
            test_mean: c.test_mean,
            test_size: c.test_size,
            delta: c.delta,
            log10_snr: c.log10_snr,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CltRow {
    pub d: usize,
    pub n: usize,
    pub exact: f64,
    pub approx: f64,
    pub rel_err: f64,
}

pub const CLT_TRAIN_SIZE: usize = 1000;

/// Exact multivariate-Normal δ against the Bayesian-CLT formula with
/// `D* = D`: `z ~ N(0,I_d)`, 1000 draws `y ~ N(z, I_d)`, prior `N(0, I)`.
pub fn run_clt_check(dims: &[usize], seed: u64) -> Result<Vec<CltRow>> {
    use rand::Rng;
    use rand_distr::StandardNormal;
    dims.iter()
        .map(|&d| {
            if d == 0 {
                return Err(Error::Argument("dimensions must be positive".into()));
            }
            let model = ConjugateModel::normal(1.0, d)?;
            let mut rng = substream(derive_seed(seed, &[3, d as u64]), 0);
            let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let mut points = Vec::with_capacity(d * CLT_TRAIN_SIZE);
            for _ in 0..CLT_TRAIN_SIZE {
                for zi in &z {
                    points.push(zi + rng.sample::<f64, _>(StandardNormal));
                }
            }
            let data = summarize(&model, &points)?;
            let xi0 = NaturalParams::new(vec![0.0; d], 1.0);
            let exact = delta_exact(&model, &xi0, &data, &data)?.delta;
            let n = CLT_TRAIN_SIZE as f64;
            let approx = delta_clt(d, n, n)?;
            Ok(CltRow {
                d,
                n: CLT_TRAIN_SIZE,
                exact,
                approx,
                rel_err: (exact - approx).abs() / exact,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorCurveRow {
    pub scenario: String,
    pub estimator: String,
    pub k: usize,
    pub replicates: usize,
    pub log_ppd: f64,
    /// Percentiles of `log PPD − log R_K`.
    #[serde(with = "tagged_f64")]
    pub median: f64,
    #[serde(with = "tagged_f64")]
    pub p05: f64,
    #[serde(with = "tagged_f64")]
    pub p95: f64,
}

fn error_rows(name: &str, estimator: &str, ks: &[usize], log_ppd: f64, per_rep: &[Vec<f64>]) -> Vec<ErrorCurveRow> {
    ks.iter()
        .enumerate()
        .map(|(i, &k)| {
            let mut errs: Vec<f64> = per_rep.iter().map(|r| log_ppd - r[i]).collect();
            errs.sort_by(|a, b| a.total_cmp(b));
            ErrorCurveRow {
                scenario: name.to_string(),
                estimator: estimator.to_string(),
                k,
                replicates: errs.len(),
                log_ppd,
                median: quantile(&errs, 0.5),
                p05: quantile(&errs, 0.05),
                p95: quantile(&errs, 0.95),
            }
        })
        .collect()
}

/// Error `log PPD − log R_K` percentiles per scenario, estimator and K, for
/// the exact-inference linear-regression scenarios. Naive replicates use
/// nested prefixes of one draw sequence; LIS trains one proposal and
/// evaluates it `spec.s` times.
pub fn run_linreg_error_curves(
    kinds: &[RegressionKind],
    naive_ks: &[usize],
    is_ks: &[usize],
    spec: &RunSpec,
) -> Result<Vec<ErrorCurveRow>> {
    spec.validate()?;
    for ks in [naive_ks, is_ks] {
        if ks.is_empty() || ks.windows(2).any(|w| w[0] >= w[1]) || ks[0] == 0 {
            return Err(Error::Argument("K lists must be positive and strictly ascending".into()));
        }
    }
    let mut rows = Vec::new();
    for &kind in kinds {
        let scenario = gen_linreg(kind, spec.seed)?;
        let eval = linreg_evaluation(&scenario, Mode::Exact, spec)?;
        let log_ppd = eval.log_ppd.expect("exact mode has an oracle");
        let seed = derive_seed(spec.seed, &[LABEL_NAIVE, kind as u64]);
        let naive: Result<Vec<Vec<f64>>> = replicate(seed, spec.s, |_, rng| {
            naive_log_rk_prefixes(eval.naive.as_ref(), naive_ks, rng).map(|v| v.iter().map(|r| r.log_r).collect())
        })
        .into_iter()
        .collect();
        rows.extend(error_rows(&eval.name, "naive", naive_ks, log_ppd, &naive?));

        let lis_seed = derive_seed(spec.seed, &[LABEL_LIS, kind as u64]);
        let (target, r) = eval.train_lis(spec, lis_seed)?;
        let lis: Result<Vec<Vec<f64>>> = replicate(lis_seed, spec.s, |_, rng| {
            is_log_rk_prefixes(&r, &target, is_ks, rng).map(|v| v.iter().map(|x| x.log_r).collect())
        })
        .into_iter()
        .collect();
        rows.extend(error_rows(&eval.name, "lis", is_ks, log_ppd, &lis?));
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub model: String,
    pub delta: f64,
    pub kl_left: f64,
    pub kl_right: f64,
    pub b_form: f64,
    pub k: u64,
    #[serde(with = "tagged_f64")]
    pub snr: f64,
    #[serde(with = "tagged_f64")]
    pub log10_snr: f64,
}

/// δ and the naive SNR for summary statistics given directly.
pub fn delta_row(
    model: &ConjugateModel,
    prior: &NaturalParams,
    train: &SufficientSummary,
    test: &SufficientSummary,
    k: u64,
) -> Result<DeltaRow> {
    let b = delta_exact(model, prior, train, test)?;
    let snr = crate::snr::snr_from_delta(b.delta, k)?;
    let log10_snr = if b.delta > 0.0 {
        log10_snr_from_delta(b.delta, k)?
    } else {
        f64::INFINITY
    };
    Ok(DeltaRow {
        model: model.name().to_string(),
        delta: b.delta,
        kl_left: b.kl_left,
        kl_right: b.kl_right,
        b_form: b.b_form,
        k,
        snr,
        log10_snr,
    })
}

/// Seed used to train `q_D` for a given spec; exposed so callers can
/// reproduce the approximate posterior of a table run.
pub fn q_d_seed(spec: &RunSpec) -> u64 {
    derive_seed(spec.seed, &[LABEL_QD])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn runspec_defaults_and_overrides() {
        let s: RunSpec = serde_json::from_str(r#"{"k_naive": 10, "seed": 3}"#).unwrap();
        assert_eq!(s.k_naive, 10);
        assert_eq!(s.seed, 3);
        assert_eq!(s.k_is, 1000);
        assert_eq!(s.s, 1000);
        assert_eq!(s.m, 16);
        assert!(serde_json::from_str::<RunSpec>(r#"{"bogus": 1}"#).is_err());
        assert!(RunSpec { s: 1, ..RunSpec::default() }.validate().is_err());
    }

    #[test]
    fn contour_zero_size_cell() {
        let grid = GridSpec {
            mean_min: 10.0,
            mean_max: 10.0,
            mean_steps: 1,
            size_min: 0.0,
            size_max: 100.0,
            size_steps: 2,
            ..GridSpec::default()
        };
        let rows = run_contour(ExpFamKind::Normal, &grid).unwrap();
        assert_eq!(rows[0].delta, Some(0.0));
        assert_eq!(rows[0].log10_snr, Some(f64::INFINITY));
        assert!(rows[1].delta.unwrap() > 0.0);
    }

    #[test]
    fn clt_rows() {
        let rows = run_clt_check(&[1, 100], 0).unwrap();
        assert!((rows[0].approx - 0.071920).abs() < 1e-6);
        assert!(rows[0].rel_err < 0.01);
        assert!((rows[1].approx - 7.1920).abs() < 1e-3);
        assert!(rows[1].rel_err < 0.01);
    }

    #[test]
    fn logreg_exact_mode_is_rejected() {
        let spec = RunSpec::default();
        assert!(run_table(&ScenarioSpec::LogReg(RegressionKind::Baseline), &spec, Mode::Exact).is_err());
    }
}
