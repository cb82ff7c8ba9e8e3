//! Differentiable unnormalized log-densities on unconstrained `R^d`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::conjugate::{log_partition, ConjugateModel, NaturalParams, SufficientSummary};
use crate::error::{Error, Result};
use crate::gaussian_linreg::{GaussianDist, GramStats};
use crate::numeric::{sigmoid, softplus};

/// Black-box target: value, gradient and optionally the Hessian.
pub trait DiffTarget: Send + Sync {
    fn dim(&self) -> usize;

    fn log_density(&self, u: &[f64]) -> f64;

    fn value_and_gradient(&self, u: &[f64]) -> (f64, Vec<f64>);

    fn gradient(&self, u: &[f64]) -> Vec<f64> {
        self.value_and_gradient(u).1
    }

    fn hessian(&self, _u: &[f64]) -> Option<DMatrix<f64>> {
        None
    }

    /// Log-density of every column of `points`.
    fn log_density_batch(&self, points: &DMatrix<f64>) -> Vec<f64> {
        points
            .column_iter()
            .map(|c| self.log_density(c.as_slice()))
            .collect()
    }
}

macro_rules! forward_target {
    ($($ptr:ty),*) => {$(
        impl<T: DiffTarget + ?Sized> DiffTarget for $ptr {
            fn dim(&self) -> usize {
                (**self).dim()
            }
            fn log_density(&self, u: &[f64]) -> f64 {
                (**self).log_density(u)
            }
            fn value_and_gradient(&self, u: &[f64]) -> (f64, Vec<f64>) {
                (**self).value_and_gradient(u)
            }
            fn gradient(&self, u: &[f64]) -> Vec<f64> {
                (**self).gradient(u)
            }
            fn hessian(&self, u: &[f64]) -> Option<DMatrix<f64>> {
                (**self).hessian(u)
            }
            fn log_density_batch(&self, points: &DMatrix<f64>) -> Vec<f64> {
                (**self).log_density_batch(points)
            }
        }
    )*};
}

forward_target!(&T, Box<T>, Arc<T>);

/// Central-difference gradient with step `1e-5·(1+|u_i|)`.
pub fn finite_difference_gradient<T: DiffTarget + ?Sized>(target: &T, u: &[f64]) -> Vec<f64> {
    let mut work = u.to_vec();
    (0..u.len())
        .map(|i| {
            let h = 1e-5 * (1.0 + u[i].abs());
            work[i] = u[i] + h;
            let up = target.log_density(&work);
            work[i] = u[i] - h;
            let down = target.log_density(&work);
            work[i] = u[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Symmetrized central-difference Jacobian of the gradient.
pub fn finite_difference_hessian<T: DiffTarget + ?Sized>(target: &T, u: &[f64]) -> DMatrix<f64> {
    let d = u.len();
    let mut work = u.to_vec();
    let mut h = DMatrix::zeros(d, d);
    for j in 0..d {
        let step = 1e-5 * (1.0 + u[j].abs());
        work[j] = u[j] + step;
        let up = target.gradient(&work);
        work[j] = u[j] - step;
        let down = target.gradient(&work);
        work[j] = u[j];
        for i in 0..d {
            h[(i, j)] = (up[i] - down[i]) / (2.0 * step);
        }
    }
    (&h + h.transpose()) * 0.5
}

/// Map from unconstrained `u` to the model's support.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    Identity,
    /// `z = e^u`, for `z > 0`.
    Exp,
    /// `z = 1/(1+e^{-u})`, for `z ∈ (0,1)`.
    Sigmoid,
}

impl Transform {
    pub fn for_model(model: &ConjugateModel) -> Self {
        match model {
            ConjugateModel::NormalKnownVar { .. } => Transform::Identity,
            ConjugateModel::ExponentialRate => Transform::Exp,
            ConjugateModel::BinomialProb { .. } => Transform::Sigmoid,
        }
    }

    pub fn forward(&self, u: f64) -> f64 {
        match self {
            Transform::Identity => u,
            Transform::Exp => u.exp(),
            Transform::Sigmoid => sigmoid(u),
        }
    }

    pub fn inverse(&self, z: f64) -> f64 {
        match self {
            Transform::Identity => z,
            Transform::Exp => z.ln(),
            Transform::Sigmoid => z.ln() - (-z).ln_1p(),
        }
    }

    /// `log |dz/du|`.
    pub fn log_abs_jacobian(&self, u: f64) -> f64 {
        match self {
            Transform::Identity => 0.0,
            Transform::Exp => u,
            Transform::Sigmoid => -softplus(u) - softplus(-u),
        }
    }

    /// `d/du log |dz/du|`.
    pub fn log_abs_jacobian_grad(&self, u: f64) -> f64 {
        match self {
            Transform::Identity => 0.0,
            Transform::Exp => 1.0,
            Transform::Sigmoid => 1.0 - 2.0 * sigmoid(u),
        }
    }

    pub fn forward_all(&self, u: &[f64]) -> Vec<f64> {
        u.iter().map(|&v| self.forward(v)).collect()
    }
}

/// `ξᵀ[φ(z), −A(z)] + offset`, optionally plus `log|dz/du|`, with `z = z(u)`.
///
/// With `ξ = ξ₀ + U(D)` and `offset = −B(ξ₀) + Σ log h` this is the joint
/// `log s(z|ξ₀) + log p(D|z)`; with `ξ = U(D)` and no Jacobian it is the
/// log-likelihood alone.
#[derive(Debug, Clone)]
pub struct ConjugateTarget {
    model: ConjugateModel,
    xi: NaturalParams,
    offset: f64,
    jacobian: bool,
}

impl ConjugateTarget {
    pub fn new(model: ConjugateModel, xi: NaturalParams, offset: f64, jacobian: bool) -> Self {
        assert_eq!(xi.tau.len(), model.dim(), "parameter dimension differs from model");
        Self {
            model,
            xi,
            offset,
            jacobian,
        }
    }

    pub fn model(&self) -> &ConjugateModel {
        &self.model
    }

    pub fn transform(&self) -> Transform {
        Transform::for_model(&self.model)
    }

    fn eval(&self, u: &[f64], want_grad: bool) -> (f64, Vec<f64>) {
        let xi = &self.xi;
        match self.model {
            ConjugateModel::NormalKnownVar { sigma2, .. } => {
                let mut dot = 0.0;
                let mut sq = 0.0;
                for (t, z) in xi.tau.iter().zip(u) {
                    dot += t * z;
                    sq += z * z;
                }
                let value = (dot - 0.5 * xi.nu * sq) / sigma2 + self.offset;
                let grad = if want_grad {
                    xi.tau.iter().zip(u).map(|(t, z)| (t - xi.nu * z) / sigma2).collect()
                } else {
                    Vec::new()
                };
                (value, grad)
            }
            ConjugateModel::ExponentialRate => {
                let u = u[0];
                let ez = u.exp();
                let tau = xi.tau[0];
                let mut value = -tau * ez + xi.nu * u + self.offset;
                let mut grad = -tau * ez + xi.nu;
                if self.jacobian {
                    value += u;
                    grad += 1.0;
                }
                (value, if want_grad { vec![grad] } else { Vec::new() })
            }
            ConjugateModel::BinomialProb { n_trials } => {
                let u = u[0];
                let n = n_trials as f64;
                let tau = xi.tau[0];
                let mut value = tau * u - xi.nu * n * softplus(u) + self.offset;
                let s = sigmoid(u);
                let mut grad = tau - xi.nu * n * s;
                if self.jacobian {
                    value += Transform::Sigmoid.log_abs_jacobian(u);
                    grad += 1.0 - 2.0 * s;
                }
                (value, if want_grad { vec![grad] } else { Vec::new() })
            }
        }
    }
}

impl DiffTarget for ConjugateTarget {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn log_density(&self, u: &[f64]) -> f64 {
        self.eval(u, false).0
    }

    fn value_and_gradient(&self, u: &[f64]) -> (f64, Vec<f64>) {
        self.eval(u, true)
    }

    fn hessian(&self, u: &[f64]) -> Option<DMatrix<f64>> {
        let xi = &self.xi;
        Some(match self.model {
            ConjugateModel::NormalKnownVar { sigma2, dim } => DMatrix::identity(dim, dim) * (-xi.nu / sigma2),
            ConjugateModel::ExponentialRate => DMatrix::from_element(1, 1, -xi.tau[0] * u[0].exp()),
            ConjugateModel::BinomialProb { n_trials } => {
                let s = sigmoid(u[0]);
                let jac = if self.jacobian { 2.0 } else { 0.0 };
                DMatrix::from_element(1, 1, -(xi.nu * n_trials as f64 + jac) * s * (1.0 - s))
            }
        })
    }
}

/// `log s(z(u)|ξ₀) + log p(D|z(u)) + log|dz/du|`.
pub fn conjugate_joint_target(
    model: &ConjugateModel,
    xi0: &NaturalParams,
    data: &SufficientSummary,
) -> Result<ConjugateTarget> {
    let b0 = log_partition(model, xi0)?;
    Ok(ConjugateTarget::new(
        *model,
        xi0.shifted_by(data),
        data.log_h_sum - b0,
        true,
    ))
}

/// The normalized density of `s(·|ξ)` pushed to the unconstrained space.
pub fn conjugate_density_target(model: &ConjugateModel, xi: &NaturalParams) -> Result<ConjugateTarget> {
    let b = log_partition(model, xi)?;
    Ok(ConjugateTarget::new(*model, xi.clone(), -b, true))
}

/// `log p(D|z(u))` with no Jacobian term.
pub fn conjugate_loglik_target(model: &ConjugateModel, data: &SufficientSummary) -> ConjugateTarget {
    ConjugateTarget::new(*model, NaturalParams::new(data.t_sum.clone(), data.count), data.log_h_sum, false)
}

/// Bernoulli log-likelihood `w Σ [y log σ(xᵀz) + (1−y) log(1−σ(xᵀz))]`.
///
/// The weight `w` stands for `w` stacked copies of the rows.
#[derive(Debug, Clone)]
pub struct LogisticLoglik {
    x: DMatrix<f64>,
    y: DVector<f64>,
    weight: f64,
}

impl LogisticLoglik {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, weight: f64) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::Argument(format!(
                "X has {} rows but y has {} entries",
                x.nrows(),
                y.len()
            )));
        }
        if let Some(bad) = y.iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::Argument(format!("logistic responses must be 0 or 1, got {bad}")));
        }
        if !(weight > 0.0) {
            return Err(Error::Argument(format!("weight must be positive, got {weight}")));
        }
        Ok(Self { x, y, weight })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    fn activations(&self, z: &[f64]) -> DVector<f64> {
        &self.x * DVector::from_column_slice(z)
    }

    fn sum_terms(&self, a: impl Iterator<Item = f64>) -> f64 {
        self.weight * a.zip(self.y.iter()).map(|(a, y)| y * a - softplus(a)).sum::<f64>()
    }

    fn neg_hessian(&self, z: &[f64]) -> DMatrix<f64> {
        let a = self.activations(z);
        let mut xw = self.x.clone();
        for (i, mut row) in xw.row_iter_mut().enumerate() {
            let s = sigmoid(a[i]);
            row *= self.weight * s * (1.0 - s);
        }
        self.x.tr_mul(&xw)
    }
}

impl DiffTarget for LogisticLoglik {
    fn dim(&self) -> usize {
        self.x.ncols()
    }

    fn log_density(&self, z: &[f64]) -> f64 {
        self.sum_terms(self.activations(z).iter().copied())
    }

    fn value_and_gradient(&self, z: &[f64]) -> (f64, Vec<f64>) {
        let a = self.activations(z);
        let value = self.sum_terms(a.iter().copied());
        let resid = DVector::from_iterator(a.len(), a.iter().zip(self.y.iter()).map(|(a, y)| y - sigmoid(*a)));
        let grad = self.x.tr_mul(&resid) * self.weight;
        (value, grad.as_slice().to_vec())
    }

    fn hessian(&self, z: &[f64]) -> Option<DMatrix<f64>> {
        Some(-self.neg_hessian(z))
    }

    fn log_density_batch(&self, points: &DMatrix<f64>) -> Vec<f64> {
        let a = &self.x * points;
        a.column_iter().map(|c| self.sum_terms(c.iter().copied())).collect()
    }
}

/// A Gaussian prior with cached precision, as a target.
#[derive(Debug, Clone)]
pub struct GaussianPrior {
    dist: GaussianDist,
    precision: DMatrix<f64>,
}

impl GaussianPrior {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let dist = GaussianDist::from_covariance(mean, cov, "prior covariance")?;
        let l_inv = dist
            .chol
            .solve_lower_triangular(&DMatrix::identity(dist.dim(), dist.dim()))
            .expect("factor has a positive diagonal");
        let precision = l_inv.tr_mul(&l_inv);
        Ok(Self { dist, precision })
    }

    pub fn dist(&self) -> &GaussianDist {
        &self.dist
    }
}

impl DiffTarget for GaussianPrior {
    fn dim(&self) -> usize {
        self.dist.dim()
    }

    fn log_density(&self, z: &[f64]) -> f64 {
        self.dist.log_density(z)
    }

    fn value_and_gradient(&self, z: &[f64]) -> (f64, Vec<f64>) {
        let diff = &self.dist.mean - DVector::from_column_slice(z);
        let grad = &self.precision * diff;
        (self.dist.log_density(z), grad.as_slice().to_vec())
    }

    fn hessian(&self, _z: &[f64]) -> Option<DMatrix<f64>> {
        Some(-self.precision.clone())
    }
}

/// Sum of two targets on the same space.
#[derive(Debug, Clone)]
pub struct SumTarget<A, B> {
    pub first: A,
    pub second: B,
}

impl<A: DiffTarget, B: DiffTarget> SumTarget<A, B> {
    pub fn new(first: A, second: B) -> Self {
        assert_eq!(first.dim(), second.dim(), "summed targets differ in dimension");
        Self { first, second }
    }
}

impl<A: DiffTarget, B: DiffTarget> DiffTarget for SumTarget<A, B> {
    fn dim(&self) -> usize {
        self.first.dim()
    }

    fn log_density(&self, u: &[f64]) -> f64 {
        self.first.log_density(u) + self.second.log_density(u)
    }

    fn value_and_gradient(&self, u: &[f64]) -> (f64, Vec<f64>) {
        let (a, mut ga) = self.first.value_and_gradient(u);
        let (b, gb) = self.second.value_and_gradient(u);
        for (x, y) in ga.iter_mut().zip(gb) {
            *x += y;
        }
        (a + b, ga)
    }

    fn hessian(&self, u: &[f64]) -> Option<DMatrix<f64>> {
        Some(self.first.hessian(u)? + self.second.hessian(u)?)
    }

    fn log_density_batch(&self, points: &DMatrix<f64>) -> Vec<f64> {
        let mut a = self.first.log_density_batch(points);
        for (x, y) in a.iter_mut().zip(self.second.log_density_batch(points)) {
            *x += y;
        }
        a
    }
}

pub type LogisticJoint = SumTarget<GaussianPrior, LogisticLoglik>;

/// Logistic-regression posterior up to its normalizer.
pub fn logreg_joint_target(
    x: DMatrix<f64>,
    y: DVector<f64>,
    prior_mu: DVector<f64>,
    prior_sigma: DMatrix<f64>,
) -> Result<LogisticJoint> {
    let lik = LogisticLoglik::new(x, y, 1.0)?;
    if prior_mu.len() != lik.dim() {
        return Err(Error::Argument(format!(
            "prior has dimension {}, X has {} columns",
            prior_mu.len(),
            lik.dim()
        )));
    }
    Ok(SumTarget::new(GaussianPrior::new(prior_mu, prior_sigma)?, lik))
}

/// Linear-regression log-likelihood `log N(y|Xz, σ²I)` from Gram statistics.
#[derive(Debug, Clone)]
pub struct LinRegLoglik {
    gram: GramStats,
    sigma2: f64,
}

impl LinRegLoglik {
    pub fn new(gram: GramStats, sigma2: f64) -> Self {
        Self { gram, sigma2 }
    }

    pub fn gram(&self) -> &GramStats {
        &self.gram
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }
}

impl DiffTarget for LinRegLoglik {
    fn dim(&self) -> usize {
        self.gram.dim()
    }

    fn log_density(&self, z: &[f64]) -> f64 {
        self.gram.loglik(&DVector::from_column_slice(z), self.sigma2)
    }

    fn value_and_gradient(&self, z: &[f64]) -> (f64, Vec<f64>) {
        let zv = DVector::from_column_slice(z);
        let grad = (&self.gram.xty - &self.gram.xtx * &zv) / self.sigma2;
        (self.gram.loglik(&zv, self.sigma2), grad.as_slice().to_vec())
    }

    fn hessian(&self, _z: &[f64]) -> Option<DMatrix<f64>> {
        Some(-&self.gram.xtx / self.sigma2)
    }
}

/// `log p(D*|z) + log q(z|D)`: the optimal proposal, unnormalized, whose
/// normalizer is the PPD.
#[derive(Clone)]
pub struct LisTarget {
    base: Arc<dyn DiffTarget>,
    loglik: Arc<dyn DiffTarget>,
}

impl LisTarget {
    pub fn base(&self) -> &Arc<dyn DiffTarget> {
        &self.base
    }

    pub fn loglik(&self) -> &Arc<dyn DiffTarget> {
        &self.loglik
    }

    /// `log p(D*|z) + (log q(z) − log r(z))` given `log r(z)`; when `r` is
    /// `q` the bracket vanishes exactly.
    pub fn log_weight(&self, u: &[f64], log_r: f64) -> f64 {
        self.loglik.log_density(u) + (self.base.log_density(u) - log_r)
    }
}

impl std::fmt::Debug for LisTarget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LisTarget").field("dim", &self.base.dim()).finish()
    }
}

pub fn lis_target(base: Arc<dyn DiffTarget>, loglik: Arc<dyn DiffTarget>) -> LisTarget {
    assert_eq!(base.dim(), loglik.dim(), "proposal base and likelihood differ in dimension");
    LisTarget { base, loglik }
}

impl DiffTarget for LisTarget {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn log_density(&self, u: &[f64]) -> f64 {
        self.loglik.log_density(u) + self.base.log_density(u)
    }

    fn value_and_gradient(&self, u: &[f64]) -> (f64, Vec<f64>) {
        let (a, mut ga) = self.loglik.value_and_gradient(u);
        let (b, gb) = self.base.value_and_gradient(u);
        for (x, y) in ga.iter_mut().zip(gb) {
            *x += y;
        }
        (a + b, ga)
    }

    fn hessian(&self, u: &[f64]) -> Option<DMatrix<f64>> {
        Some(self.loglik.hessian(u)? + self.base.hessian(u)?)
    }

    fn log_density_batch(&self, points: &DMatrix<f64>) -> Vec<f64> {
        let mut a = self.loglik.log_density_batch(points);
        for (x, y) in a.iter_mut().zip(self.base.log_density_batch(points)) {
            *x += y;
        }
        a
    }
}
