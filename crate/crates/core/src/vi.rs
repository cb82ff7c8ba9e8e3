//! Full-rank Gaussian variational family and its optimizers.
//!
//! Parameters are packed as `[μ; scale_raw]` with the lower triangle of
//! `scale_raw` stored row by row. The effective factor `L` equals
//! `scale_raw` below the diagonal and `softplus(scale_raw_ii)` on it.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{inv_softplus, sigmoid, softplus, LogSumExp};
use crate::rng::{substream, StreamRng, STREAM_INIT, STREAM_TRAIN};
use crate::targets::{finite_difference_hessian, DiffTarget};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq)]
pub struct FullRankGaussian {
    mu: DVector<f64>,
    scale_raw: DMatrix<f64>,
    l: DMatrix<f64>,
    log_det_l: f64,
}

impl FullRankGaussian {
    pub fn new(mu: DVector<f64>, scale_raw: DMatrix<f64>) -> Result<Self> {
        let d = mu.len();
        if d == 0 || scale_raw.nrows() != d || scale_raw.ncols() != d {
            return Err(Error::Argument(format!(
                "scale is {}x{}, mean has length {d}",
                scale_raw.nrows(),
                scale_raw.ncols()
            )));
        }
        let mut g = Self {
            mu,
            scale_raw: scale_raw.lower_triangle(),
            l: DMatrix::zeros(d, d),
            log_det_l: 0.0,
        };
        g.refresh();
        Ok(g)
    }

    /// From a mean and a lower Cholesky factor with positive diagonal.
    pub fn from_mean_chol(mu: DVector<f64>, chol: &DMatrix<f64>) -> Result<Self> {
        let d = mu.len();
        if chol.nrows() != d || chol.ncols() != d {
            return Err(Error::Argument("factor shape differs from mean".into()));
        }
        let mut raw = chol.lower_triangle();
        for i in 0..d {
            let v = chol[(i, i)];
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Numeric(format!("factor diagonal entry {v} is not positive")));
            }
            raw[(i, i)] = inv_softplus(v);
        }
        Self::new(mu, raw)
    }

    pub fn from_mean_cov(mu: DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        let chol = Cholesky::new((cov + cov.transpose()) * 0.5)
            .ok_or_else(|| Error::Numeric("covariance is not positive definite".into()))?;
        Self::from_mean_chol(mu, &chol.l())
    }

    pub fn standard(d: usize) -> Self {
        Self::from_mean_chol(DVector::zeros(d), &DMatrix::identity(d, d)).expect("identity factor is valid")
    }

    fn refresh(&mut self) {
        let d = self.dim();
        self.l = self.scale_raw.lower_triangle();
        let mut log_det = 0.0;
        for i in 0..d {
            let v = softplus(self.scale_raw[(i, i)]);
            self.l[(i, i)] = v;
            log_det += v.ln();
        }
        self.log_det_l = log_det;
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mu
    }

    /// The effective lower factor `L`.
    pub fn chol(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn scale_raw(&self) -> &DMatrix<f64> {
        &self.scale_raw
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        &self.l * self.l.transpose()
    }

    pub fn entropy(&self) -> f64 {
        self.log_det_l + 0.5 * self.dim() as f64 * (1.0 + LN_2PI)
    }

    pub fn n_params(&self) -> usize {
        let d = self.dim();
        d + d * (d + 1) / 2
    }

    pub fn params(&self) -> Vec<f64> {
        let d = self.dim();
        let mut p = Vec::with_capacity(self.n_params());
        p.extend(self.mu.iter());
        for i in 0..d {
            for j in 0..=i {
                p.push(self.scale_raw[(i, j)]);
            }
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.n_params(), "parameter vector has the wrong length");
        let d = self.dim();
        self.mu.copy_from_slice(&p[..d]);
        let mut k = d;
        for i in 0..d {
            for j in 0..=i {
                self.scale_raw[(i, j)] = p[k];
                k += 1;
            }
        }
        self.refresh();
    }

    pub fn with_params(&self, p: &[f64]) -> Self {
        let mut g = self.clone();
        g.set_params(p);
        g
    }

    /// `z = μ + Lε`.
    pub fn sample_reparam(&self, eps: &[f64]) -> DVector<f64> {
        let e = DVector::from_column_slice(eps);
        &self.mu + &self.l * e
    }

    /// Draw `ε` from the standard normal into `eps` and return `μ + Lε`.
    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R, eps: &mut [f64]) -> DVector<f64> {
        for e in eps.iter_mut() {
            *e = rng.sample(StandardNormal);
        }
        self.sample_reparam(eps)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let mut eps = vec![0.0; self.dim()];
        self.sample_with(rng, &mut eps)
    }

    fn whiten(&self, z: &[f64]) -> DVector<f64> {
        let diff = DVector::from_iterator(self.dim(), z.iter().zip(self.mu.iter()).map(|(a, b)| a - b));
        self.l.solve_lower_triangular(&diff).expect("factor has a positive diagonal")
    }

    /// Packs `∂/∂μ = gμ` and `∂/∂L = gL` (lower triangle) into the
    /// parameter layout, chaining the diagonal through softplus.
    fn pack_gradient(&self, g_mu: &DVector<f64>, g_l: &DMatrix<f64>) -> Vec<f64> {
        let d = self.dim();
        let mut p = Vec::with_capacity(self.n_params());
        p.extend(g_mu.iter());
        for i in 0..d {
            for j in 0..i {
                p.push(g_l[(i, j)]);
            }
            p.push(g_l[(i, i)] * sigmoid(self.scale_raw[(i, i)]));
        }
        p
    }
}

impl DiffTarget for FullRankGaussian {
    fn dim(&self) -> usize {
        self.mu.len()
    }

    fn log_density(&self, z: &[f64]) -> f64 {
        let w = self.whiten(z);
        -0.5 * w.norm_squared() - self.log_det_l - 0.5 * self.dim() as f64 * LN_2PI
    }

    fn value_and_gradient(&self, z: &[f64]) -> (f64, Vec<f64>) {
        let w = self.whiten(z);
        let value = -0.5 * w.norm_squared() - self.log_det_l - 0.5 * self.dim() as f64 * LN_2PI;
        let g = -self.l.tr_solve_lower_triangular(&w).expect("factor has a positive diagonal");
        (value, g.as_slice().to_vec())
    }

    fn hessian(&self, _z: &[f64]) -> Option<DMatrix<f64>> {
        let d = self.dim();
        let l_inv = self.l.solve_lower_triangular(&DMatrix::identity(d, d))?;
        Some(-l_inv.tr_mul(&l_inv))
    }
}

/// An objective estimate and its gradient in the packed parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveEstimate {
    pub value: f64,
    pub gradient: Vec<f64>,
}

/// `count` standard-normal draws of dimension `d`, one per column.
pub fn standard_noise<R: Rng + ?Sized>(d: usize, count: usize, rng: &mut R) -> DMatrix<f64> {
    let v: Vec<f64> = (0..d * count).map(|_| rng.sample(StandardNormal)).collect();
    DMatrix::from_vec(d, count, v)
}

/// Reparameterized ELBO estimate and gradient for fixed noise columns.
pub fn elbo_gradient_with_noise<T: DiffTarget + ?Sized>(
    g: &FullRankGaussian,
    target: &T,
    noise: &DMatrix<f64>,
) -> ObjectiveEstimate {
    let d = g.dim();
    let b = noise.ncols() as f64;
    let mut g_mu = DVector::zeros(d);
    let mut g_l = DMatrix::zeros(d, d);
    let mut sum = 0.0;
    for eps in noise.column_iter() {
        let z = &g.mu + &g.l * eps;
        let (v, grad) = target.value_and_gradient(z.as_slice());
        sum += v;
        let gv = DVector::from_column_slice(&grad);
        g_mu += &gv;
        g_l += &gv * eps.transpose();
    }
    g_mu /= b;
    g_l /= b;
    for i in 0..d {
        g_l[(i, i)] += 1.0 / g.l[(i, i)];
    }
    ObjectiveEstimate {
        value: sum / b + g.entropy(),
        gradient: g.pack_gradient(&g_mu, &g_l),
    }
}

/// ELBO estimate from `batch` fresh samples with its reparameterized gradient.
pub fn elbo_gradient<T: DiffTarget + ?Sized, R: Rng + ?Sized>(
    g: &FullRankGaussian,
    target: &T,
    batch: usize,
    rng: &mut R,
) -> ObjectiveEstimate {
    let noise = standard_noise(g.dim(), batch.max(1), rng);
    elbo_gradient_with_noise(g, target, &noise)
}

/// ELBO estimate alone for fixed noise.
pub fn elbo_with_noise<T: DiffTarget + ?Sized>(g: &FullRankGaussian, target: &T, noise: &DMatrix<f64>) -> f64 {
    let z = &g.l * noise + DMatrix::from_fn(g.dim(), noise.ncols(), |i, _| g.mu[i]);
    let vals = target.log_density_batch(&z);
    vals.iter().sum::<f64>() / noise.ncols() as f64 + g.entropy()
}

/// IW-ELBO estimate `log (1/M) Σ exp(target(z_m) − log r(z_m))` for fixed noise.
pub fn iw_elbo_with_noise<T: DiffTarget + ?Sized>(r: &FullRankGaussian, target: &T, noise: &DMatrix<f64>) -> f64 {
    let z = &r.l * noise + DMatrix::from_fn(r.dim(), noise.ncols(), |i, _| r.mu[i]);
    let vals = target.log_density_batch(&z);
    let mut acc = LogSumExp::new();
    for (col, v) in z.column_iter().zip(vals) {
        acc.push(v - r.log_density(col.as_slice()));
    }
    acc.log_mean()
}

pub fn iw_elbo_estimate<T: DiffTarget + ?Sized, R: Rng + ?Sized>(
    r: &FullRankGaussian,
    target: &T,
    m: usize,
    rng: &mut R,
) -> f64 {
    let noise = standard_noise(r.dim(), m.max(1), rng);
    iw_elbo_with_noise(r, target, &noise)
}

/// Doubly-reparameterized IW-ELBO gradient for fixed noise; the value is
/// the IW-ELBO estimate of the same samples.
pub fn dreg_gradient_with_noise<T: DiffTarget + ?Sized>(
    r: &FullRankGaussian,
    target: &T,
    noise: &DMatrix<f64>,
) -> ObjectiveEstimate {
    let d = r.dim();
    let m = noise.ncols();
    let mut log_w = Vec::with_capacity(m);
    let mut grads = Vec::with_capacity(m);
    for eps in noise.column_iter() {
        let z = &r.mu + &r.l * eps;
        let (t, gt) = target.value_and_gradient(z.as_slice());
        let (lr, glr) = r.value_and_gradient(z.as_slice());
        log_w.push(t - lr);
        let g: DVector<f64> = DVector::from_iterator(d, gt.iter().zip(&glr).map(|(a, b)| a - b));
        grads.push(g);
    }
    let mut acc = LogSumExp::new();
    for &w in &log_w {
        acc.push(w);
    }
    let lse = acc.log_sum();
    let mut g_mu = DVector::zeros(d);
    let mut g_l = DMatrix::zeros(d, d);
    if lse.is_finite() {
        for ((w, g), eps) in log_w.iter().zip(&grads).zip(noise.column_iter()) {
            let wn = (w - lse).exp();
            let c = wn * wn;
            if c == 0.0 {
                continue;
            }
            g_mu.axpy(c, g, 1.0);
            g_l += (g * eps.transpose()) * c;
        }
    }
    ObjectiveEstimate {
        value: lse - (m as f64).ln(),
        gradient: r.pack_gradient(&g_mu, &g_l.lower_triangle()),
    }
}

pub fn dreg_gradient<T: DiffTarget + ?Sized, R: Rng + ?Sized>(
    r: &FullRankGaussian,
    target: &T,
    m: usize,
    rng: &mut R,
) -> ObjectiveEstimate {
    let noise = standard_noise(r.dim(), m.max(1), rng);
    dreg_gradient_with_noise(r, target, &noise)
}

/// Adam with `β₁ = 0.9`, `β₂ = 0.999`, `ε = 1e-8`, ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn ascend(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - Self::BETA1.powi(t);
        let c2 = 1.0 - Self::BETA2.powi(t);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] += lr * m_hat / (v_hat.sqrt() + Self::EPS);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iters: usize,
    pub learning_rate: f64,
    /// Inner importance samples of the IW-ELBO.
    pub m: usize,
    /// Gradient estimates averaged per step.
    pub grad_batch: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// ELBO training of `q_D`: 1000 steps, lr 1e-3, 16 averaged samples.
    pub fn elbo(seed: u64) -> Self {
        Self {
            iters: 1000,
            learning_rate: 1e-3,
            m: 1,
            grad_batch: 16,
            seed,
        }
    }

    /// IW-ELBO training of a LIS proposal: 1000 steps, lr 1e-3, M = 16, 8 copies.
    pub fn iw_elbo(seed: u64) -> Self {
        Self {
            iters: 1000,
            learning_rate: 1e-3,
            m: 16,
            grad_batch: 8,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.grad_batch == 0 {
            return Err(Error::Argument("M and grad_batch must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Argument(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Objective {
    Elbo,
    IwElbo(usize),
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub model: FullRankGaussian,
    /// Objective estimate at every iteration, before its update.
    pub trace: Vec<f64>,
}

/// Adam ascent on the ELBO or the DReG-estimated IW-ELBO.
pub fn train<T: DiffTarget + ?Sized>(
    target: &T,
    init: &FullRankGaussian,
    objective: Objective,
    config: &TrainConfig,
) -> Result<TrainResult> {
    config.validate()?;
    if init.dim() != target.dim() {
        return Err(Error::Argument(format!(
            "initial family has dimension {}, target {}",
            init.dim(),
            target.dim()
        )));
    }
    let mut rng = substream(config.seed, STREAM_TRAIN);
    let mut model = init.clone();
    let mut params = model.params();
    let mut adam = AdamState::new(params.len());
    let mut trace = Vec::with_capacity(config.iters);
    let d = model.dim();
    for iteration in 0..config.iters {
        let (value, grad) = match objective {
            Objective::Elbo => {
                let est = elbo_gradient(&model, target, config.grad_batch, &mut rng);
                (est.value, est.gradient)
            }
            Objective::IwElbo(m) => {
                let mut value = 0.0;
                let mut grad = vec![0.0; params.len()];
                for _ in 0..config.grad_batch {
                    let noise = standard_noise(d, m.max(1), &mut rng);
                    let est = dreg_gradient_with_noise(&model, target, &noise);
                    value += est.value;
                    for (a, b) in grad.iter_mut().zip(&est.gradient) {
                        *a += b;
                    }
                }
                let b = config.grad_batch as f64;
                grad.iter_mut().for_each(|g| *g /= b);
                (value / b, grad)
            }
        };
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Training {
                iteration,
                reason: "non-finite gradient".into(),
            });
        }
        trace.push(value);
        adam.ascend(&mut params, &grad, config.learning_rate);
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Training {
                iteration,
                reason: "parameters became NaN".into(),
            });
        }
        model.set_params(&params);
    }
    Ok(TrainResult { model, trace })
}

const NEWTON_MAX_ITERS: usize = 100;
const NEWTON_GRAD_TOL: f64 = 1e-8;
const NEWTON_MAX_HALVINGS: usize = 60;
const SELECTION_SAMPLES: usize = 1000;

/// Newton ascent from the origin to the mode, with the Gaussian whose
/// precision is the negative Hessian there. `None` if Newton fails or the
/// negative Hessian is not positive definite.
pub fn laplace_approximation<T: DiffTarget + ?Sized>(target: &T) -> Option<FullRankGaussian> {
    let d = target.dim();
    let hess = |u: &[f64]| target.hessian(u).unwrap_or_else(|| finite_difference_hessian(target, u));
    let mut u = vec![0.0; d];
    let (mut f, mut g) = target.value_and_gradient(&u);
    if !f.is_finite() {
        return None;
    }
    let mut converged = false;
    for _ in 0..NEWTON_MAX_ITERS {
        if g.iter().map(|v| v * v).sum::<f64>().sqrt() < NEWTON_GRAD_TOL {
            converged = true;
            break;
        }
        let neg_h = -hess(&u);
        let chol = Cholesky::new((&neg_h + neg_h.transpose()) * 0.5)?;
        let gv = DVector::from_column_slice(&g);
        let step = chol.solve(&gv);
        let decrement = gv.dot(&step);
        if !decrement.is_finite() {
            return None;
        }
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..NEWTON_MAX_HALVINGS {
            let cand: Vec<f64> = u.iter().zip(step.iter()).map(|(a, s)| a + alpha * s).collect();
            let fc = target.log_density(&cand);
            if fc.is_finite() && fc > f {
                let (fv, gv) = target.value_and_gradient(&cand);
                u = cand;
                f = fv;
                g = gv;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            // No further ascent is representable: at the mode to rounding.
            converged = decrement < 1e-10 * (1.0 + f.abs());
            break;
        }
    }
    if !converged {
        converged = g.iter().map(|v| v * v).sum::<f64>().sqrt() < NEWTON_GRAD_TOL;
    }
    if !converged {
        return None;
    }
    let neg_h = -hess(&u);
    let chol = Cholesky::new((&neg_h + neg_h.transpose()) * 0.5)?;
    let cov = chol.inverse();
    FullRankGaussian::from_mean_cov(DVector::from_vec(u), &cov).ok()
}

/// Laplace approximation or the standard normal, whichever has the larger
/// 1000-sample ELBO under shared noise.
pub fn laplace_init<T: DiffTarget + ?Sized>(target: &T, seed: u64) -> FullRankGaussian {
    let d = target.dim();
    let standard = FullRankGaussian::standard(d);
    let Some(laplace) = laplace_approximation(target) else {
        return standard;
    };
    let mut rng: StreamRng = substream(seed, STREAM_INIT);
    let noise = standard_noise(d, SELECTION_SAMPLES, &mut rng);
    let a = elbo_with_noise(&laplace, target, &noise);
    let b = elbo_with_noise(&standard, target, &noise);
    if a.is_finite() && !(b > a) {
        laplace
    } else {
        standard
    }
}

/// Picks the candidate with the highest mean IW-ELBO_M over about
/// `1000/M` replicates of shared noise.
pub fn select_by_iw_elbo<T: DiffTarget + ?Sized>(
    target: &T,
    candidates: &[FullRankGaussian],
    m: usize,
    seed: u64,
) -> Result<FullRankGaussian> {
    let first = candidates
        .first()
        .ok_or_else(|| Error::Argument("no candidate proposals".into()))?;
    let d = first.dim();
    let m = m.max(1);
    let reps = (SELECTION_SAMPLES / m).max(1);
    let mut rng: StreamRng = substream(seed, STREAM_INIT);
    let noises: Vec<DMatrix<f64>> = (0..reps).map(|_| standard_noise(d, m, &mut rng)).collect();
    let mut best = first;
    let mut best_score = f64::NEG_INFINITY;
    for c in candidates {
        let score = noises.iter().map(|n| iw_elbo_with_noise(c, target, n)).sum::<f64>() / reps as f64;
        if score > best_score {
            best_score = score;
            best = c;
        }
    }
    Ok(best.clone())
}

/// LIS proposal initialization: Laplace, the standard normal and, when
/// given, `q_D`, selected by IW-ELBO.
pub fn lis_init<T: DiffTarget + ?Sized>(
    target: &T,
    q_d: Option<&FullRankGaussian>,
    m: usize,
    seed: u64,
) -> Result<FullRankGaussian> {
    let d = target.dim();
    let mut candidates = Vec::with_capacity(3);
    if let Some(l) = laplace_approximation(target) {
        candidates.push(l);
    }
    candidates.push(FullRankGaussian::standard(d));
    if let Some(q) = q_d {
        candidates.push(q.clone());
    }
    select_by_iw_elbo(target, &candidates, m, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    use crate::conjugate::{log_ppd_exact, posterior_params, ConjugateModel, NaturalParams, SufficientSummary};
    use crate::targets::{
        conjugate_density_target, conjugate_joint_target, conjugate_loglik_target, lis_target, logreg_joint_target,
    };

    fn toy_gaussian() -> FullRankGaussian {
        let l = DMatrix::from_row_slice(2, 2, &[0.8, 0.0, -0.3, 1.4]);
        FullRankGaussian::from_mean_chol(DVector::from_column_slice(&[0.5, -1.0]), &l).unwrap()
    }

    #[test]
    fn packing_round_trip() {
        let g = toy_gaussian();
        let p = g.params();
        assert_eq!(p.len(), 5);
        let h = FullRankGaussian::standard(2).with_params(&p);
        assert!((h.chol() - g.chol()).abs().max() < 1e-14);
        assert_eq!(h.mean(), g.mean());
    }

    #[test]
    fn reparam_examples() {
        let g = toy_gaussian();
        assert_eq!(g.sample_reparam(&[0.0, 0.0]), g.mean().clone());
        let one = FullRankGaussian::from_mean_chol(DVector::zeros(1), &DMatrix::from_element(1, 1, 2.0)).unwrap();
        assert!((one.sample_reparam(&[1.0])[0] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn sample_covariance_d3() {
        let l = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.5, 2.0, 0.0, -0.4, 0.3, 0.7]);
        let g = FullRankGaussian::from_mean_chol(DVector::from_column_slice(&[1.0, 2.0, 3.0]), &l).unwrap();
        let mut rng = substream(1, 0);
        let n = 1_000_000;
        let mut s = DMatrix::zeros(3, 3);
        let mut mean = DVector::zeros(3);
        for _ in 0..n {
            let z = g.sample(&mut rng);
            mean += &z;
            s += &z * z.transpose();
        }
        mean /= n as f64;
        let cov = s / n as f64 - &mean * mean.transpose();
        let target = g.covariance();
        for i in 0..3 {
            for j in 0..3 {
                let scale = (target[(i, i)] * target[(j, j)]).sqrt();
                assert!((cov[(i, j)] - target[(i, j)]).abs() < 0.02 * scale, "{cov} vs {target}");
            }
        }
    }

    #[test]
    fn density_normalizes_d2() {
        let g = toy_gaussian();
        let h = 0.02;
        let mut mass = 0.0;
        for i in 0..800 {
            for j in 0..800 {
                let z = [-7.5 + h * (i as f64 + 0.5), -9.0 + h * (j as f64 + 0.5)];
                mass += g.log_density(&z).exp() * h * h;
            }
        }
        assert!((mass - 1.0).abs() < 1e-5, "{mass}");
    }

    #[test]
    fn gaussian_target_gradient() {
        let g = toy_gaussian();
        let z = [0.1, 0.3];
        let fd = crate::targets::finite_difference_gradient(&g, &z);
        let gr = g.gradient(&z);
        for (a, b) in gr.iter().zip(&fd) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn elbo_of_own_density_is_zero() {
        let g = toy_gaussian();
        let mut rng = substream(2, 0);
        let est = elbo_gradient(&g, &g, 1000, &mut rng);
        // The integrand is d/2 − ‖ε‖²/2, whose variance is d/2.
        let se = (1.0f64 / 1000.0).sqrt();
        assert!(est.value.abs() < 3.0 * se, "{}", est.value);
    }

    #[test]
    fn elbo_gradient_matches_crn_fd() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.2, -0.5, 1.0, 0.3, -1.2, 2.0, 0.1]);
        let y = DVector::from_column_slice(&[1.0, 0.0, 1.0, 1.0]);
        let t = logreg_joint_target(x, y, DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        let g = toy_gaussian();
        let noise = standard_noise(2, 50, &mut substream(3, 0));
        let est = elbo_gradient_with_noise(&g, &t, &noise);
        let p = g.params();
        for k in 0..p.len() {
            let h = 1e-5 * (1.0 + p[k].abs());
            let mut up = p.clone();
            up[k] += h;
            let mut dn = p.clone();
            dn[k] -= h;
            let fd = (elbo_with_noise(&g.with_params(&up), &t, &noise) - elbo_with_noise(&g.with_params(&dn), &t, &noise)) / (2.0 * h);
            assert!((fd - est.gradient[k]).abs() <= 1e-5 * fd.abs().max(1.0), "param {k}: {fd} vs {}", est.gradient[k]);
        }
    }

    #[test]
    fn iw_elbo_of_own_density_is_zero() {
        let g = toy_gaussian();
        for m in [1, 4, 16] {
            let v = iw_elbo_estimate(&g, &g, m, &mut substream(4, m as u64));
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn dreg_single_sample_is_stl() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.2, -0.5, 1.0, 0.3, -1.2]);
        let y = DVector::from_column_slice(&[1.0, 0.0, 1.0]);
        let t = logreg_joint_target(x, y, DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        let g = toy_gaussian();
        let noise = standard_noise(2, 1, &mut substream(5, 0));
        let est = dreg_gradient_with_noise(&g, &t, &noise);
        // Sticking-the-landing: J^T ∇z[t − log r] with r's parameters held fixed.
        let eps = noise.column(0).into_owned();
        let z = g.sample_reparam(eps.as_slice());
        let gz = DVector::from_column_slice(&t.gradient(z.as_slice())) - DVector::from_column_slice(&g.gradient(z.as_slice()));
        let mut expected = gz.as_slice().to_vec();
        let raw = g.scale_raw();
        for i in 0..2 {
            for j in 0..=i {
                let chain = if i == j { sigmoid(raw[(i, i)]) } else { 1.0 };
                expected.push(gz[i] * eps[j] * chain);
            }
        }
        for (a, b) in est.gradient.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut adam = AdamState::new(2);
        let mut p = vec![0.0, 1.0];
        adam.ascend(&mut p, &[3.0, -0.5], 0.1);
        assert!((p[0] - 0.1).abs() < 1e-8);
        assert!((p[1] - 0.9).abs() < 1e-8);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn zero_iterations_keep_init() {
        let g = toy_gaussian();
        let cfg = TrainConfig { iters: 0, ..TrainConfig::elbo(1) };
        let r = train(&g, &g, Objective::Elbo, &cfg).unwrap();
        assert_eq!(r.model, g);
        assert!(r.trace.is_empty());
    }

    #[test]
    fn laplace_on_quadratic_is_exact() {
        let model = ConjugateModel::normal(1.0, 2).unwrap();
        let xi0 = NaturalParams::new(vec![0.0, 0.0], 1.0);
        let data = SufficientSummary::new(vec![30.0, -12.0], 10.0, 0.0).unwrap();
        let t = conjugate_joint_target(&model, &xi0, &data).unwrap();
        let lap = laplace_approximation(&t).unwrap();
        let post = posterior_params(&xi0, &data);
        assert!((lap.mean()[0] - 30.0 / 11.0).abs() < 1e-10);
        assert!((lap.mean()[1] + 12.0 / 11.0).abs() < 1e-10);
        assert!((lap.covariance() - DMatrix::identity(2, 2) / post.nu).abs().max() < 1e-12);

        let std = FullRankGaussian::standard(3);
        let lap = laplace_init(&std, 1);
        assert!(lap.mean().norm() < 1e-12);
        assert!((lap.covariance() - DMatrix::identity(3, 3)).abs().max() < 1e-12);
    }

    #[test]
    fn laplace_logistic_grid_argmax() {
        let x = DMatrix::from_row_slice(5, 2, &[1.0, 0.2, -0.5, 1.0, 0.3, -1.2, 2.0, 0.1, -1.0, -1.0]);
        let y = DVector::from_column_slice(&[1.0, 0.0, 1.0, 1.0, 0.0]);
        let t = logreg_joint_target(x, y, DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        let lap = laplace_approximation(&t).unwrap();
        // Coarse grid over [-4, 4]², then a fine grid around its argmax.
        let argmax = |lo0: f64, lo1: f64, h: f64, n: usize| {
            let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
            for i in 0..=n {
                for j in 0..=n {
                    let z = [lo0 + h * i as f64, lo1 + h * j as f64];
                    let v = t.log_density(&z);
                    if v > best.0 {
                        best = (v, z[0], z[1]);
                    }
                }
            }
            best
        };
        let coarse = argmax(-4.0, -4.0, 0.01, 800);
        let best = argmax(coarse.1 - 0.02, coarse.2 - 0.02, 1e-4, 400);
        assert!((lap.mean()[0] - best.1).abs() < 1e-3 && (lap.mean()[1] - best.2).abs() < 1e-3, "{} vs {best:?}", lap.mean());
    }

    #[test]
    fn lis_exact_posterior_gives_exact_iw_elbo() {
        let model = ConjugateModel::normal(1.0, 1).unwrap();
        let xi0 = NaturalParams::scalar(0.0, 1.0);
        let data = SufficientSummary::scalar(1000.0, 100.0);
        let test = SufficientSummary::scalar(500.0, 100.0);
        let xi_d = posterior_params(&xi0, &data);
        let q: Arc<dyn DiffTarget> = Arc::new(conjugate_density_target(&model, &xi_d).unwrap());
        let lik: Arc<dyn DiffTarget> = Arc::new(conjugate_loglik_target(&model, &test));
        let target = lis_target(q, lik);
        let post = xi_d.shifted_by(&test);
        let r = FullRankGaussian::from_mean_cov(
            DVector::from_element(1, post.tau[0] / post.nu),
            &DMatrix::from_element(1, 1, 1.0 / post.nu),
        )
        .unwrap();
        let ppd = log_ppd_exact(&model, &xi0, &data, &test).unwrap();
        for m in [1, 4, 16] {
            let v = iw_elbo_estimate(&r, &target, m, &mut substream(9, m as u64));
            assert!((v - ppd).abs() < 1e-9 * ppd.abs(), "{v} vs {ppd}");
            let g = dreg_gradient(&r, &target, m, &mut substream(9, m as u64));
            assert!(g.gradient.iter().all(|x| x.abs() < 1e-6), "{:?}", g.gradient);
        }
    }
}
