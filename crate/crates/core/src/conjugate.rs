//! Conjugate exponential-family models.
//!
//! A likelihood `p(y|z) = h(y) exp(T(y)ᵀφ(z) − A(z))` has the conjugate
//! family `s(z|ξ) = exp(ξᵀ[φ(z), −A(z)] − B(ξ))` with `ξ = (τ, ν)`. Updating
//! on a dataset adds `(ΣT(y), |D|)` to ξ, so datasets are carried around as a
//! [`SufficientSummary`] and never as raw points.
//!
//! Supported models (all with `T(y) = y`):
//!
//! | model | h(y) | φ(z) | A(z) | conjugate family |
//! |---|---|---|---|---|
//! | `NormalKnownVar` | `N(y|0,σ²I)` | `z/σ²` | `‖z‖²/2σ²` | `N(τ/ν, σ²/ν·I)` |
//! | `ExponentialRate` | `1` | `−z` | `−log z` | `Gamma(ν+1, rate τ)` |
//! | `BinomialProb` | `C(n,y)` | `logit z` | `−n log(1−z)` | `Beta(τ+1, nν−τ+1)` |

use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{digamma, ln_binomial, ln_gamma};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConjugateModel {
    /// Unknown mean `z ∈ R^dim`, known isotropic covariance `σ²I`.
    NormalKnownVar { sigma2: f64, dim: usize },
    /// Unknown rate `z > 0` of an exponential likelihood.
    ExponentialRate,
    /// Unknown success probability `z ∈ (0,1)` with `n_trials` known.
    BinomialProb { n_trials: u64 },
}

impl ConjugateModel {
    pub fn normal(sigma2: f64, dim: usize) -> Result<Self> {
        let m = ConjugateModel::NormalKnownVar { sigma2, dim };
        m.validate()?;
        Ok(m)
    }

    pub fn exponential() -> Self {
        ConjugateModel::ExponentialRate
    }

    pub fn binomial(n_trials: u64) -> Result<Self> {
        let m = ConjugateModel::BinomialProb { n_trials };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ConjugateModel::NormalKnownVar { sigma2, dim } => {
                if !(sigma2 > 0.0 && sigma2.is_finite()) {
                    return Err(Error::Argument(format!("sigma2 must be positive, got {sigma2}")));
                }
                if dim == 0 {
                    return Err(Error::Argument("dim must be at least 1".into()));
                }
            }
            ConjugateModel::ExponentialRate => {}
            ConjugateModel::BinomialProb { n_trials } => {
                if n_trials == 0 {
                    return Err(Error::Argument("n_trials must be at least 1".into()));
                }
            }
        }
        Ok(())
    }

    /// Dimension of both the latent variable and a single observation.
    pub fn dim(&self) -> usize {
        match *self {
            ConjugateModel::NormalKnownVar { dim, .. } => dim,
            _ => 1,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ConjugateModel::NormalKnownVar { .. } => "normal",
            ConjugateModel::ExponentialRate => "exp",
            ConjugateModel::BinomialProb { .. } => "binomial",
        }
    }
}

/// A dataset reduced to `(ΣT(y), |D|, Σ log h(y))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SufficientSummary {
    pub t_sum: Vec<f64>,
    /// Number of observations. Stored as a real so that multiset scaling
    /// and contour grids need no conversions; always non-negative.
    pub count: f64,
    pub log_h_sum: f64,
}

impl SufficientSummary {
    pub fn new(t_sum: Vec<f64>, count: f64, log_h_sum: f64) -> Result<Self> {
        if !(count >= 0.0 && count.is_finite()) {
            return Err(Error::Argument(format!("count must be non-negative, got {count}")));
        }
        if count == 0.0 && (t_sum.iter().any(|&t| t != 0.0) || log_h_sum != 0.0) {
            return Err(Error::Argument(
                "an empty summary must have zero statistics".into(),
            ));
        }
        Ok(Self {
            t_sum,
            count,
            log_h_sum,
        })
    }

    /// Summary of a scalar dataset given only `(ΣT, |D|)`; `log_h_sum` is zero.
    pub fn scalar(t_sum: f64, count: f64) -> Self {
        Self {
            t_sum: vec![t_sum],
            count,
            log_h_sum: 0.0,
        }
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            t_sum: vec![0.0; dim],
            count: 0.0,
            log_h_sum: 0.0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0.0
    }

    pub fn dim(&self) -> usize {
        self.t_sum.len()
    }

    /// Multiset union `D₁ + D₂`.
    pub fn combine(&self, other: &Self) -> Self {
        assert_eq!(self.dim(), other.dim(), "summary dimensions differ");
        Self {
            t_sum: self.t_sum.iter().zip(&other.t_sum).map(|(a, b)| a + b).collect(),
            count: self.count + other.count,
            log_h_sum: self.log_h_sum + other.log_h_sum,
        }
    }

    /// Multiset scaling `cD`.
    pub fn scale(&self, c: f64) -> Self {
        Self {
            t_sum: self.t_sum.iter().map(|t| c * t).collect(),
            count: c * self.count,
            log_h_sum: c * self.log_h_sum,
        }
    }
}

/// Canonical parameters `ξ = (τ, ν)` of a conjugate-family member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaturalParams {
    pub tau: Vec<f64>,
    pub nu: f64,
}

impl NaturalParams {
    pub fn new(tau: Vec<f64>, nu: f64) -> Self {
        Self { tau, nu }
    }

    pub fn scalar(tau: f64, nu: f64) -> Self {
        Self { tau: vec![tau], nu }
    }

    /// `ξ + U(D)` with `U(D) = (ΣT, |D|)`.
    pub fn shifted_by(&self, summary: &SufficientSummary) -> Self {
        assert_eq!(self.tau.len(), summary.dim(), "parameter and summary dimensions differ");
        Self {
            tau: self.tau.iter().zip(&summary.t_sum).map(|(a, b)| a + b).collect(),
            nu: self.nu + summary.count,
        }
    }

    fn tau1(&self) -> f64 {
        self.tau[0]
    }
}

/// Standard-form view of a conjugate-family member.
#[derive(Debug, Clone, PartialEq)]
pub enum StandardForm {
    /// Isotropic normal `N(mean, var·I)`.
    Normal { mean: Vec<f64>, var: f64 },
    /// Gamma with shape and rate.
    Gamma { shape: f64, rate: f64 },
    Beta { alpha: f64, beta: f64 },
}

impl StandardForm {
    /// Log-density at `z`; `-inf` outside the support.
    pub fn log_density(&self, z: &[f64]) -> f64 {
        match self {
            StandardForm::Normal { mean, var } => {
                let sq: f64 = z.iter().zip(mean).map(|(a, b)| (a - b).powi(2)).sum();
                -0.5 * (mean.len() as f64 * (LN_2PI + var.ln()) + sq / var)
            }
            StandardForm::Gamma { shape, rate } => {
                let x = z[0];
                if x <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                shape * rate.ln() - ln_gamma(*shape) + (shape - 1.0) * x.ln() - rate * x
            }
            StandardForm::Beta { alpha, beta } => {
                let x = z[0];
                if x <= 0.0 || x >= 1.0 {
                    return f64::NEG_INFINITY;
                }
                (alpha - 1.0) * x.ln() + (beta - 1.0) * (-x).ln_1p() - ln_beta(*alpha, *beta)
            }
        }
    }
}

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

fn check_dims(model: &ConjugateModel, xi: &NaturalParams) -> Result<()> {
    if xi.tau.len() != model.dim() {
        return Err(Error::Argument(format!(
            "natural parameter has dimension {}, model expects {}",
            xi.tau.len(),
            model.dim()
        )));
    }
    Ok(())
}

fn check_domain(model: &ConjugateModel, xi: &NaturalParams) -> Result<()> {
    check_dims(model, xi)?;
    if xi.tau.iter().any(|t| !t.is_finite()) || !xi.nu.is_finite() {
        return Err(Error::Domain(format!("non-finite natural parameters {xi:?}")));
    }
    match *model {
        ConjugateModel::NormalKnownVar { .. } => {
            if xi.nu <= 0.0 {
                return Err(Error::Domain(format!("normal family requires nu > 0, got {}", xi.nu)));
            }
        }
        ConjugateModel::ExponentialRate => {
            if xi.tau1() <= 0.0 {
                return Err(Error::Domain(format!(
                    "exponential family requires tau > 0, got {}",
                    xi.tau1()
                )));
            }
            if xi.nu <= -1.0 {
                return Err(Error::Domain(format!(
                    "exponential family requires nu > -1, got {}",
                    xi.nu
                )));
            }
        }
        ConjugateModel::BinomialProb { n_trials } => {
            let n = n_trials as f64;
            if xi.tau1() <= -1.0 {
                return Err(Error::Domain(format!(
                    "binomial family requires tau > -1, got {}",
                    xi.tau1()
                )));
            }
            if n * xi.nu - xi.tau1() <= -1.0 {
                return Err(Error::Domain(format!(
                    "binomial family requires n*nu - tau > -1, got {}",
                    n * xi.nu - xi.tau1()
                )));
            }
            if n * xi.nu <= -2.0 {
                return Err(Error::Domain(format!(
                    "binomial family requires n*nu > -2, got {}",
                    n * xi.nu
                )));
            }
        }
    }
    Ok(())
}

/// Summarize raw observations.
///
/// For `NormalKnownVar` with `dim > 1` the points are laid out row-major,
/// `dim` consecutive values per observation.
pub fn summarize(model: &ConjugateModel, points: &[f64]) -> Result<SufficientSummary> {
    model.validate()?;
    match *model {
        ConjugateModel::NormalKnownVar { sigma2, dim } => {
            if points.len() % dim != 0 {
                return Err(Error::Argument(format!(
                    "{} values do not form whole {dim}-dimensional observations",
                    points.len()
                )));
            }
            let mut t_sum = vec![0.0; dim];
            let mut log_h_sum = 0.0;
            let count = points.len() / dim;
            let log_norm = 0.5 * dim as f64 * (LN_2PI + sigma2.ln());
            for obs in points.chunks(dim) {
                let mut sq = 0.0;
                for (acc, &y) in t_sum.iter_mut().zip(obs) {
                    if !y.is_finite() {
                        return Err(Error::Domain(format!("observation {y} is not finite")));
                    }
                    *acc += y;
                    sq += y * y;
                }
                log_h_sum += -sq / (2.0 * sigma2) - log_norm;
            }
            Ok(SufficientSummary {
                t_sum,
                count: count as f64,
                log_h_sum,
            })
        }
        ConjugateModel::ExponentialRate => {
            let mut t = 0.0;
            for &y in points {
                if !(y >= 0.0 && y.is_finite()) {
                    return Err(Error::Domain(format!(
                        "exponential observation {y} is outside [0, inf)"
                    )));
                }
                t += y;
            }
            Ok(SufficientSummary {
                t_sum: vec![t],
                count: points.len() as f64,
                log_h_sum: 0.0,
            })
        }
        ConjugateModel::BinomialProb { n_trials } => {
            let n = n_trials as f64;
            let mut t = 0.0;
            let mut log_h = 0.0;
            for &y in points {
                if !(y >= 0.0 && y <= n && y.fract() == 0.0) {
                    return Err(Error::Domain(format!(
                        "binomial observation {y} is not an integer in [0, {n_trials}]"
                    )));
                }
                t += y;
                log_h += ln_binomial(n, y);
            }
            Ok(SufficientSummary {
                t_sum: vec![t],
                count: points.len() as f64,
                log_h_sum: log_h,
            })
        }
    }
}

/// `ξ_D = ξ₀ + (ΣT, |D|)`.
pub fn posterior_params(xi0: &NaturalParams, summary: &SufficientSummary) -> NaturalParams {
    xi0.shifted_by(summary)
}

/// Log-partition `B(ξ)` of the conjugate family.
pub fn log_partition(model: &ConjugateModel, xi: &NaturalParams) -> Result<f64> {
    check_domain(model, xi)?;
    Ok(log_partition_unchecked(model, xi))
}

fn log_partition_unchecked(model: &ConjugateModel, xi: &NaturalParams) -> f64 {
    match *model {
        ConjugateModel::NormalKnownVar { sigma2, dim } => {
            let sq: f64 = xi.tau.iter().map(|t| t * t).sum();
            0.5 * (dim as f64 * (LN_2PI + sigma2.ln() - xi.nu.ln()) + sq / (sigma2 * xi.nu))
        }
        ConjugateModel::ExponentialRate => ln_gamma(xi.nu + 1.0) - (xi.nu + 1.0) * xi.tau1().ln(),
        ConjugateModel::BinomialProb { n_trials } => {
            let n = n_trials as f64;
            let t = xi.tau1();
            ln_gamma(t + 1.0) + ln_gamma(n * xi.nu - t + 1.0) - ln_gamma(n * xi.nu + 2.0)
        }
    }
}

pub fn to_standard(model: &ConjugateModel, xi: &NaturalParams) -> Result<StandardForm> {
    check_domain(model, xi)?;
    Ok(match *model {
        ConjugateModel::NormalKnownVar { sigma2, .. } => StandardForm::Normal {
            mean: xi.tau.iter().map(|t| t / xi.nu).collect(),
            var: sigma2 / xi.nu,
        },
        ConjugateModel::ExponentialRate => StandardForm::Gamma {
            shape: xi.nu + 1.0,
            rate: xi.tau1(),
        },
        ConjugateModel::BinomialProb { n_trials } => StandardForm::Beta {
            alpha: xi.tau1() + 1.0,
            beta: n_trials as f64 * xi.nu - xi.tau1() + 1.0,
        },
    })
}

/// `KL(s(·|ξ_a) ‖ s(·|ξ_b))` from the standard-form closed expressions.
pub fn kl(model: &ConjugateModel, xi_a: &NaturalParams, xi_b: &NaturalParams) -> Result<f64> {
    let a = to_standard(model, xi_a)?;
    let b = to_standard(model, xi_b)?;
    let value = match (a, b) {
        (StandardForm::Normal { mean: ma, var: va }, StandardForm::Normal { mean: mb, var: vb }) => {
            let d = ma.len() as f64;
            let sq: f64 = ma.iter().zip(&mb).map(|(x, y)| (x - y).powi(2)).sum();
            let ratio = va / vb;
            0.5 * (d * (ratio - 1.0 - ratio.ln()) + sq / vb)
        }
        (
            StandardForm::Gamma { shape: a1, rate: b1 },
            StandardForm::Gamma { shape: a2, rate: b2 },
        ) => {
            (a1 - a2) * digamma(a1) - ln_gamma(a1) + ln_gamma(a2) + a2 * (b1.ln() - b2.ln())
                + a1 * (b2 - b1) / b1
        }
        (
            StandardForm::Beta { alpha: a1, beta: b1 },
            StandardForm::Beta { alpha: a2, beta: b2 },
        ) => {
            ln_beta(a2, b2) - ln_beta(a1, b1)
                + (a1 - a2) * digamma(a1)
                + (b1 - b2) * digamma(b1)
                + (a2 - a1 + b2 - b1) * digamma(a1 + b1)
        }
        _ => unreachable!("standard forms of one model share a family"),
    };
    Ok(value)
}

/// Exact `log PPD = B(ξ_{D+D*}) − B(ξ_D) + Σ_{D*} log h(y)`.
pub fn log_ppd_exact(
    model: &ConjugateModel,
    xi0: &NaturalParams,
    data: &SufficientSummary,
    test: &SufficientSummary,
) -> Result<f64> {
    let xi_d = posterior_params(xi0, data);
    if test.is_empty() {
        check_domain(model, &xi_d)?;
        return Ok(0.0);
    }
    let xi_dd = xi_d.shifted_by(test);
    Ok(log_partition(model, &xi_dd)? - log_partition(model, &xi_d)? + test.log_h_sum)
}

/// Draws from the standard form of a conjugate-family member.
#[derive(Debug, Clone)]
pub struct PosteriorSampler {
    kind: SamplerKind,
}

#[derive(Debug, Clone)]
enum SamplerKind {
    Normal { mean: Vec<f64>, sd: f64 },
    Gamma(Gamma<f64>),
    Beta(Beta<f64>),
}

impl PosteriorSampler {
    pub fn new(model: &ConjugateModel, xi: &NaturalParams) -> Result<Self> {
        let kind = match to_standard(model, xi)? {
            StandardForm::Normal { mean, var } => SamplerKind::Normal { mean, sd: var.sqrt() },
            StandardForm::Gamma { shape, rate } => SamplerKind::Gamma(
                Gamma::new(shape, 1.0 / rate)
                    .map_err(|e| Error::Domain(format!("gamma({shape}, {rate}): {e}")))?,
            ),
            StandardForm::Beta { alpha, beta } => SamplerKind::Beta(
                Beta::new(alpha, beta)
                    .map_err(|e| Error::Domain(format!("beta({alpha}, {beta}): {e}")))?,
            ),
        };
        Ok(Self { kind })
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            SamplerKind::Normal { mean, .. } => mean.len(),
            _ => 1,
        }
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match &self.kind {
            SamplerKind::Normal { mean, sd } => {
                for (o, m) in out.iter_mut().zip(mean) {
                    let e: f64 = rng.sample(StandardNormal);
                    *o = m + sd * e;
                }
            }
            SamplerKind::Gamma(g) => out[0] = g.sample(rng),
            SamplerKind::Beta(b) => out[0] = b.sample(rng),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.sample_into(rng, &mut out);
        out
    }
}

/// `K` independent draws from `s(·|ξ)`.
pub fn sample_posterior<R: Rng + ?Sized>(
    model: &ConjugateModel,
    xi: &NaturalParams,
    count: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let sampler = PosteriorSampler::new(model, xi)?;
    Ok((0..count).map(|_| sampler.sample(rng)).collect())
}

/// `log p(D|z) = ΣT·φ(z) − |D|·A(z) + Σ log h(y)`.
///
/// Returns `-inf` when `z` lies outside the model's support.
pub fn loglik(model: &ConjugateModel, z: &[f64], summary: &SufficientSummary) -> f64 {
    if summary.is_empty() {
        return 0.0;
    }
    match *model {
        ConjugateModel::NormalKnownVar { sigma2, .. } => {
            let mut dot = 0.0;
            let mut sq = 0.0;
            for (t, zi) in summary.t_sum.iter().zip(z) {
                dot += t * zi;
                sq += zi * zi;
            }
            (dot - 0.5 * summary.count * sq) / sigma2 + summary.log_h_sum
        }
        ConjugateModel::ExponentialRate => {
            let x = z[0];
            if !(x > 0.0) {
                return f64::NEG_INFINITY;
            }
            -summary.t_sum[0] * x + summary.count * x.ln() + summary.log_h_sum
        }
        ConjugateModel::BinomialProb { n_trials } => {
            let x = z[0];
            if !(x > 0.0 && x < 1.0) {
                return f64::NEG_INFINITY;
            }
            let log1m = (-x).ln_1p();
            summary.t_sum[0] * (x.ln() - log1m)
                + summary.count * n_trials as f64 * log1m
                + summary.log_h_sum
        }
    }
}
