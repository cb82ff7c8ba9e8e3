//! Monte Carlo PPD estimators and their empirical diagnostics.
//!
//! Every estimate is kept in log space: `log R_K = logsumexp_k(ℓ_k) − log K`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conjugate::PosteriorSampler;
use crate::error::{Error, Result};
use crate::gaussian_linreg::{GaussianDist, GramStats};
use crate::numeric::LogSumExp;
use crate::rng::{derive_seed, substream, StreamRng, STREAM_ESTIMATE};
use crate::targets::{lis_target, DiffTarget, LisTarget, Transform};
use crate::vi::{lis_init, standard_noise, train, FullRankGaussian, Objective, TrainConfig};

const CHUNK: usize = 4096;

/// One estimate `log R_K`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRk {
    pub log_r: f64,
    /// Every log-weight was `-inf`; `log_r` is then `-inf` too.
    pub all_zero_weights: bool,
}

/// A source of posterior draws, produced in column batches.
pub trait ZSource: Send + Sync {
    fn dim(&self) -> usize;
    fn draw_batch(&self, rng: &mut StreamRng, count: usize) -> DMatrix<f64>;
}

impl ZSource for FullRankGaussian {
    fn dim(&self) -> usize {
        FullRankGaussian::dim(self)
    }

    fn draw_batch(&self, rng: &mut StreamRng, count: usize) -> DMatrix<f64> {
        let noise = standard_noise(FullRankGaussian::dim(self), count, rng);
        let mut z = self.chol() * noise;
        for mut c in z.column_iter_mut() {
            c += self.mean();
        }
        z
    }
}

impl ZSource for GaussianDist {
    fn dim(&self) -> usize {
        GaussianDist::dim(self)
    }

    fn draw_batch(&self, rng: &mut StreamRng, count: usize) -> DMatrix<f64> {
        let noise = standard_noise(GaussianDist::dim(self), count, rng);
        let mut z = &self.chol * noise;
        for mut c in z.column_iter_mut() {
            c += &self.mean;
        }
        z
    }
}

/// Exact conjugate posterior draws, mapped to the unconstrained space.
#[derive(Debug, Clone)]
pub struct ConjugateSource {
    sampler: PosteriorSampler,
    transform: Transform,
}

impl ConjugateSource {
    pub fn new(sampler: PosteriorSampler, transform: Transform) -> Self {
        Self { sampler, transform }
    }
}

impl ZSource for ConjugateSource {
    fn dim(&self) -> usize {
        self.sampler.dim()
    }

    fn draw_batch(&self, rng: &mut StreamRng, count: usize) -> DMatrix<f64> {
        let d = self.sampler.dim();
        let mut z = DMatrix::zeros(d, count);
        let mut buf = vec![0.0; d];
        for mut c in z.column_iter_mut() {
            self.sampler.sample_into(rng, &mut buf);
            for (o, v) in c.iter_mut().zip(&buf) {
                *o = self.transform.inverse(*v);
            }
        }
        z
    }
}

/// Log-likelihoods `log p(D*|z)` of fresh posterior draws.
pub trait LoglikStream: Send + Sync {
    fn fill(&self, rng: &mut StreamRng, count: usize, out: &mut Vec<f64>);
}

/// Draws from a [`ZSource`] scored by a target.
pub struct SampledLoglik<S, T> {
    pub source: S,
    pub loglik: T,
}

impl<S: ZSource, T: DiffTarget> LoglikStream for SampledLoglik<S, T> {
    fn fill(&self, rng: &mut StreamRng, count: usize, out: &mut Vec<f64>) {
        let z = self.source.draw_batch(rng, count);
        out.extend(self.loglik.log_density_batch(&z));
    }
}

/// Gaussian-posterior draws scored by a linear-regression likelihood in
/// `O(d)` per draw.
///
/// With `z = μ + Lε` the test log-likelihood is the quadratic
/// `c₀ + gᵀε − ½εᵀHε`; rotating `ε` onto the eigenvectors of `H` keeps it
/// standard normal and makes the quadratic diagonal.
#[derive(Debug, Clone)]
pub struct RotatedLinRegLoglik {
    c0: f64,
    g: DVector<f64>,
    lambda: DVector<f64>,
}

impl RotatedLinRegLoglik {
    pub fn new(posterior: &GaussianDist, test: &GramStats, sigma2: f64) -> Self {
        let l = &posterior.chol;
        let mu = &posterior.mean;
        let c0 = test.loglik(mu, sigma2);
        let g = l.tr_mul(&(&test.xty - &test.xtx * mu)) / sigma2;
        let h = l.tr_mul(&(&test.xtx * l)) / sigma2;
        let eig = SymmetricEigen::new((&h + h.transpose()) * 0.5);
        let g = eig.eigenvectors.tr_mul(&g);
        Self {
            c0,
            g,
            lambda: eig.eigenvalues,
        }
    }

    /// Test log-likelihood at rotated noise `ε'`.
    pub fn eval(&self, eps: &[f64]) -> f64 {
        let mut v = self.c0;
        for ((e, g), l) in eps.iter().zip(self.g.iter()).zip(self.lambda.iter()) {
            v += g * e - 0.5 * l * e * e;
        }
        v
    }
}

impl LoglikStream for RotatedLinRegLoglik {
    fn fill(&self, rng: &mut StreamRng, count: usize, out: &mut Vec<f64>) {
        let d = self.g.len();
        let mut eps = vec![0.0; d];
        for _ in 0..count {
            for e in eps.iter_mut() {
                *e = rng.sample(StandardNormal);
            }
            out.push(self.eval(&eps));
        }
    }
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Argument("K must be at least 1".into()));
    }
    Ok(())
}

fn finish(acc: &LogSumExp) -> LogRk {
    let log_r = acc.log_mean();
    LogRk {
        log_r,
        all_zero_weights: log_r == f64::NEG_INFINITY,
    }
}

/// Naive estimator `log (1/K) Σ p(D*|z_k)`, `z_k ~ q_D`.
pub fn naive_log_rk(stream: &dyn LoglikStream, k: usize, rng: &mut StreamRng) -> Result<LogRk> {
    Ok(naive_log_rk_prefixes(stream, &[k], rng)?[0])
}

/// `log R_K` for every `K` in `ks` from one nested sequence of draws.
pub fn naive_log_rk_prefixes(stream: &dyn LoglikStream, ks: &[usize], rng: &mut StreamRng) -> Result<Vec<LogRk>> {
    let k_max = ks.iter().copied().max().ok_or_else(|| Error::Argument("empty K list".into()))?;
    for &k in ks {
        check_k(k)?;
    }
    let mut sorted: Vec<usize> = ks.to_vec();
    sorted.sort_unstable();
    let mut acc = LogSumExp::new();
    let mut at = Vec::with_capacity(sorted.len());
    let mut next = 0;
    let mut buf = Vec::with_capacity(CHUNK);
    let mut drawn = 0;
    while drawn < k_max {
        let n = CHUNK.min(k_max - drawn);
        buf.clear();
        stream.fill(rng, n, &mut buf);
        for &v in &buf {
            acc.push(v);
            drawn += 1;
            while next < sorted.len() && sorted[next] == drawn {
                at.push((sorted[next], finish(&acc)));
                next += 1;
            }
        }
    }
    Ok(ks
        .iter()
        .map(|k| at.iter().find(|(kk, _)| kk == k).expect("every K was reached").1)
        .collect())
}

/// Importance-sampling estimator with proposal `r` and LIS target
/// `log p(D*|z) + log q(z)`.
pub fn is_log_rk(r: &FullRankGaussian, target: &LisTarget, k: usize, rng: &mut StreamRng) -> Result<LogRk> {
    Ok(is_log_rk_prefixes(r, target, &[k], rng)?[0])
}

pub fn is_log_rk_prefixes(r: &FullRankGaussian, target: &LisTarget, ks: &[usize], rng: &mut StreamRng) -> Result<Vec<LogRk>> {
    if r.dim() != target.dim() {
        return Err(Error::Argument(format!(
            "proposal has dimension {}, target {}",
            r.dim(),
            target.dim()
        )));
    }
    let stream = IsWeights { r, target };
    naive_log_rk_prefixes(&stream, ks, rng)
}

struct IsWeights<'a> {
    r: &'a FullRankGaussian,
    target: &'a LisTarget,
}

impl LoglikStream for IsWeights<'_> {
    fn fill(&self, rng: &mut StreamRng, count: usize, out: &mut Vec<f64>) {
        let z = ZSource::draw_batch(self.r, rng, count);
        let lik = self.target.loglik().log_density_batch(&z);
        let base = self.target.base().log_density_batch(&z);
        for ((col, l), b) in z.column_iter().zip(lik).zip(base) {
            let log_r = self.r.log_density(col.as_slice());
            out.push(l + (b - log_r));
        }
    }
}

/// How the LIS proposal is initialized.
#[derive(Debug, Clone)]
pub enum LisInit {
    /// Best of Laplace, standard normal and (if given) `q_D` by IW-ELBO.
    Select(Option<FullRankGaussian>),
    Fixed(FullRankGaussian),
}

/// Builds the LIS target and trains a proposal on it by DReG/IW-ELBO.
pub fn train_lis_proposal(
    base: Arc<dyn DiffTarget>,
    loglik: Arc<dyn DiffTarget>,
    init: &LisInit,
    config: &TrainConfig,
) -> Result<(LisTarget, FullRankGaussian)> {
    config.validate()?;
    let target = lis_target(base, loglik);
    let start = match init {
        LisInit::Select(q) => lis_init(&target, q.as_ref(), config.m, config.seed)?,
        LisInit::Fixed(r) => r.clone(),
    };
    let trained = train(&target, &start, Objective::IwElbo(config.m), config)?;
    Ok((target, trained.model))
}

/// The learned-importance-sampling pipeline: train `r` on the IW-ELBO,
/// then one `K`-sample IS estimate from a disjoint random stream.
pub fn evaluate_lis(
    base: Arc<dyn DiffTarget>,
    loglik: Arc<dyn DiffTarget>,
    init: &LisInit,
    config: &TrainConfig,
    k: usize,
) -> Result<(FullRankGaussian, LogRk)> {
    let (target, r) = train_lis_proposal(base, loglik, init, config)?;
    let mut rng = substream(config.seed, STREAM_ESTIMATE);
    let est = is_log_rk(&r, &target, k, &mut rng)?;
    Ok((r, est))
}

/// `S` replicate values of `log R_K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEstimateBatch {
    pub values: Vec<f64>,
    pub k: usize,
}

impl LogEstimateBatch {
    pub fn new(values: Vec<f64>, k: usize) -> Self {
        Self { values, k }
    }

    pub fn s(&self) -> usize {
        self.values.len()
    }
}

/// `Ê[log R_K]` and the empirical SNR of `R_K` over `S` replicates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub mean_log_r: f64,
    /// `log10(m/s)` of the replicate values of `R_K`; `+inf` when they
    /// all coincide, `-inf` when every replicate is zero.
    pub log10_snr_hat: f64,
    pub k: usize,
    pub s: usize,
}

pub fn empirical_report(batch: &LogEstimateBatch) -> Result<EstimatorReport> {
    let s = batch.s();
    if s < 2 {
        return Err(Error::Argument(format!("need at least 2 replicates, got {s}")));
    }
    let values = &batch.values;
    let mean_log_r = values.iter().sum::<f64>() / s as f64;
    let a = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log10_snr_hat = if a == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        let scaled: Vec<f64> = values.iter().map(|v| (v - a).exp()).collect();
        let m = scaled.iter().sum::<f64>() / s as f64;
        let var = scaled.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (s - 1) as f64;
        if var == 0.0 {
            f64::INFINITY
        } else {
            m.log10() - 0.5 * var.log10()
        }
    };
    Ok(EstimatorReport {
        mean_log_r,
        log10_snr_hat,
        k: batch.k,
        s,
    })
}

/// Runs `f` for replicates `0..count` in parallel, each with its own random
/// substream; results are ordered by replicate index.
pub fn replicate<T, F>(seed: u64, count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, &mut StreamRng) -> T + Sync,
{
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(derive_seed(seed, &[i as u64]), STREAM_ESTIMATE);
            f(i, &mut rng)
        })
        .collect()
}

/// `S` naive replicates at inner size `K`.
pub fn naive_batch(stream: &dyn LoglikStream, k: usize, s: usize, seed: u64) -> Result<LogEstimateBatch> {
    let values: Result<Vec<f64>> = replicate(seed, s, |_, rng| naive_log_rk(stream, k, rng).map(|r| r.log_r))
        .into_iter()
        .collect();
    Ok(LogEstimateBatch::new(values?, k))
}

/// `S` IS replicates of one proposal at inner size `K`.
pub fn is_batch(r: &FullRankGaussian, target: &LisTarget, k: usize, s: usize, seed: u64) -> Result<LogEstimateBatch> {
    let values: Result<Vec<f64>> = replicate(seed, s, |_, rng| is_log_rk(r, target, k, rng).map(|v| v.log_r))
        .into_iter()
        .collect();
    Ok(LogEstimateBatch::new(values?, k))
}
