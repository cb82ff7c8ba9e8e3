//! Bayesian linear regression with known noise variance.
//!
//! Data enter only through Gram statistics `(XᵀX, Xᵀy, yᵀy, n)`, so the
//! factored matrices stay `d×d` however many rows the datasets have.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Multivariate normal stored by mean and lower Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDist {
    pub mean: DVector<f64>,
    pub chol: DMatrix<f64>,
}

impl GaussianDist {
    pub fn new(mean: DVector<f64>, chol: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if chol.nrows() != d || chol.ncols() != d {
            return Err(Error::Argument(format!(
                "factor is {}x{}, mean has length {d}",
                chol.nrows(),
                chol.ncols()
            )));
        }
        if (0..d).any(|i| !(chol[(i, i)] > 0.0)) {
            return Err(Error::Numeric("Cholesky factor needs a positive diagonal".into()));
        }
        Ok(Self {
            mean,
            chol: chol.lower_triangle(),
        })
    }

    /// Factor `cov`; `name` identifies the matrix in the error message.
    pub fn from_covariance(mean: DVector<f64>, cov: DMatrix<f64>, name: &str) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::Argument(format!(
                "{name} is {}x{}, mean has length {}",
                cov.nrows(),
                cov.ncols(),
                mean.len()
            )));
        }
        let chol = factor(&cov, name)?;
        Self::new(mean, chol.l())
    }

    pub fn standard(d: usize) -> Self {
        Self {
            mean: DVector::zeros(d),
            chol: DMatrix::identity(d, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        &self.chol * self.chol.transpose()
    }

    pub fn log_det_cov(&self) -> f64 {
        2.0 * self.chol.diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }

    pub fn log_density(&self, z: &[f64]) -> f64 {
        let diff = DVector::from_iterator(self.dim(), z.iter().zip(self.mean.iter()).map(|(a, b)| a - b));
        let w = self
            .chol
            .solve_lower_triangular(&diff)
            .expect("factor has a positive diagonal");
        -0.5 * (self.dim() as f64 * LN_2PI + self.log_det_cov() + w.norm_squared())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let eps = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.mean + &self.chol * eps
    }

    /// `KL(self ‖ other)`.
    pub fn kl(&self, other: &GaussianDist) -> f64 {
        let d = self.dim() as f64;
        let m = other
            .chol
            .solve_lower_triangular(&self.chol)
            .expect("factor has a positive diagonal");
        let w = other
            .chol
            .solve_lower_triangular(&(&other.mean - &self.mean))
            .expect("factor has a positive diagonal");
        0.5 * (m.norm_squared() + w.norm_squared() - d + other.log_det_cov() - self.log_det_cov())
    }
}

fn factor(m: &DMatrix<f64>, name: &str) -> Result<Cholesky<f64, Dyn>> {
    let sym = (m + m.transpose()) * 0.5;
    Cholesky::new(sym).ok_or_else(|| Error::Numeric(format!("{name} is not positive definite")))
}

/// Additive summary of a regression dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct GramStats {
    pub xtx: DMatrix<f64>,
    pub xty: DVector<f64>,
    pub yty: f64,
    pub n: f64,
}

impl GramStats {
    pub fn new(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::Argument(format!(
                "X has {} rows but y has {} entries",
                x.nrows(),
                y.len()
            )));
        }
        Ok(Self {
            xtx: x.tr_mul(x),
            xty: x.tr_mul(y),
            yty: y.norm_squared(),
            n: x.nrows() as f64,
        })
    }

    pub fn empty(d: usize) -> Self {
        Self {
            xtx: DMatrix::zeros(d, d),
            xty: DVector::zeros(d),
            yty: 0.0,
            n: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.xty.len()
    }

    pub fn combine(&self, other: &Self) -> Self {
        Self {
            xtx: &self.xtx + &other.xtx,
            xty: &self.xty + &other.xty,
            yty: self.yty + other.yty,
            n: self.n + other.n,
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            xtx: &self.xtx * c,
            xty: &self.xty * c,
            yty: self.yty * c,
            n: self.n * c,
        }
    }

    /// `log N(y | Xz, σ²I)` for the summarized rows.
    pub fn loglik(&self, z: &DVector<f64>, sigma2: f64) -> f64 {
        if self.n == 0.0 {
            return 0.0;
        }
        let rss = self.yty - 2.0 * z.dot(&self.xty) + (&self.xtx * z).dot(z);
        -0.5 * (self.n * (LN_2PI + sigma2.ln()) + rss / sigma2)
    }
}

#[derive(Debug, Clone)]
pub struct LinRegProblem {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub sigma2: f64,
    pub prior: GaussianDist,
    gram: GramStats,
}

impl LinRegProblem {
    pub fn new(
        x: DMatrix<f64>,
        y: DVector<f64>,
        sigma2: f64,
        mu0: DVector<f64>,
        sigma0: DMatrix<f64>,
    ) -> Result<Self> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::Argument(format!("sigma2 must be positive, got {sigma2}")));
        }
        if x.ncols() != mu0.len() {
            return Err(Error::Argument(format!(
                "X has {} columns, prior mean has length {}",
                x.ncols(),
                mu0.len()
            )));
        }
        let prior = GaussianDist::from_covariance(mu0, sigma0, "Sigma0")?;
        let gram = GramStats::new(&x, &y)?;
        Ok(Self {
            x,
            y,
            sigma2,
            prior,
            gram,
        })
    }

    pub fn dim(&self) -> usize {
        self.prior.dim()
    }

    pub fn gram(&self) -> &GramStats {
        &self.gram
    }

    /// Posterior after the training rows plus `extra`.
    pub fn posterior_with(&self, extra: &GramStats) -> Result<GaussianDist> {
        posterior_from_gram(&self.prior, &self.gram.combine(extra), self.sigma2)
    }

    pub fn test_gram(&self, xstar: &DMatrix<f64>, ystar: &DVector<f64>) -> Result<GramStats> {
        if xstar.ncols() != self.dim() {
            return Err(Error::Argument(format!(
                "test X has {} columns, training X has {}",
                xstar.ncols(),
                self.dim()
            )));
        }
        GramStats::new(xstar, ystar)
    }
}

/// Gaussian posterior given a Gaussian prior and Gram statistics.
pub fn posterior_from_gram(prior: &GaussianDist, gram: &GramStats, sigma2: f64) -> Result<GaussianDist> {
    if gram.n == 0.0 {
        return Ok(prior.clone());
    }
    let d = prior.dim();
    let prior_chol = Cholesky::new(prior.covariance()).ok_or_else(|| Error::Numeric("prior covariance is not positive definite".into()))?;
    let prior_prec = prior_chol.inverse();
    let precision = &gram.xtx / sigma2 + &prior_prec;
    let prec_chol = factor(&precision, "posterior precision")?;
    let rhs = &gram.xty / sigma2 + &prior_prec * &prior.mean;
    let mean = prec_chol.solve(&rhs);
    let cov = prec_chol.inverse();
    debug_assert_eq!(cov.nrows(), d);
    GaussianDist::from_covariance(mean, cov, "posterior covariance")
}

pub fn posterior(problem: &LinRegProblem) -> Result<GaussianDist> {
    posterior_from_gram(&problem.prior, &problem.gram, problem.sigma2)
}

/// `log N(y | Xμ, XΣXᵀ + σ²I)` from Gram statistics, via the matrix
/// determinant lemma and Woodbury identity.
pub fn log_evidence_gram(prior: &GaussianDist, gram: &GramStats, sigma2: f64) -> Result<f64> {
    if gram.n == 0.0 {
        return Ok(0.0);
    }
    let mu = &prior.mean;
    let prior_chol = Cholesky::new(prior.covariance()).ok_or_else(|| Error::Numeric("prior covariance is not positive definite".into()))?;
    let prior_prec = prior_chol.inverse();
    let precision = &gram.xtx / sigma2 + prior_prec;
    let prec_chol = factor(&precision, "posterior precision")?;
    let log_det_prec = 2.0 * prec_chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let log_det = gram.n * sigma2.ln() + prior.log_det_cov() + log_det_prec;

    let xtx_mu = &gram.xtx * mu;
    let rtr = gram.yty - 2.0 * mu.dot(&gram.xty) + mu.dot(&xtx_mu);
    let v = &gram.xty - xtx_mu;
    let w = prec_chol
        .l()
        .solve_lower_triangular(&v)
        .expect("factor has a positive diagonal");
    let quad = rtr / sigma2 - w.norm_squared() / (sigma2 * sigma2);
    Ok(-0.5 * (gram.n * LN_2PI + log_det + quad))
}

pub fn log_evidence(problem: &LinRegProblem) -> Result<f64> {
    log_evidence_gram(&problem.prior, &problem.gram, problem.sigma2)
}

/// Exact `log p(D*|D)`, the evidence of `D*` under the posterior given `D`.
pub fn log_ppd_exact_linreg(problem: &LinRegProblem, xstar: &DMatrix<f64>, ystar: &DVector<f64>) -> Result<f64> {
    let test = problem.test_gram(xstar, ystar)?;
    if test.n == 0.0 {
        return Ok(0.0);
    }
    let post = posterior(problem)?;
    log_evidence_gram(&post, &test, problem.sigma2)
}

/// Exact δ from the three posteriors given `D`, `D+D*` and `D+2D*`.
pub fn delta_exact_linreg(problem: &LinRegProblem, xstar: &DMatrix<f64>, ystar: &DVector<f64>) -> Result<f64> {
    let test = problem.test_gram(xstar, ystar)?;
    if test.n == 0.0 {
        return Ok(0.0);
    }
    let p1 = problem.posterior_with(&GramStats::empty(problem.dim()))?;
    let p2 = problem.posterior_with(&test.scale(2.0))?;
    let p3 = problem.posterior_with(&test)?;
    Ok((0.5 * p3.kl(&p1) + 0.5 * p3.kl(&p2)).max(0.0))
}

/// The vanishing-prior limit of δ for `m` mismatched copies, with bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thm3Limit {
    pub limit: f64,
    pub lower: f64,
    pub upper: f64,
}

const THM3_SLACK: f64 = 1e-9;

pub fn delta_limit_thm3(x: &DMatrix<f64>, delta: &DVector<f64>, sigma2: f64, m: usize) -> Result<Thm3Limit> {
    if x.nrows() != delta.len() {
        return Err(Error::Argument(format!(
            "X has {} rows, mismatch vector has {} entries",
            x.nrows(),
            delta.len()
        )));
    }
    if m == 0 {
        return Err(Error::Argument("m must be at least 1".into()));
    }
    if !(sigma2 > 0.0) {
        return Err(Error::Argument(format!("sigma2 must be positive, got {sigma2}")));
    }
    let d = x.ncols() as f64;
    let m = m as f64;
    let xtx = x.tr_mul(x);
    let chol = Cholesky::new(xtx).ok_or_else(|| Error::Numeric("X is rank deficient".into()))?;
    let l = chol.l();
    let min_diag = l.diagonal().min();
    let max_diag = l.diagonal().max();
    if !(min_diag > 1e-10 * max_diag) {
        return Err(Error::Numeric("X is rank deficient".into()));
    }
    let xtd = x.tr_mul(delta);
    let w = l.solve_lower_triangular(&xtd).expect("factor has a positive diagonal");
    let proj = w.norm_squared();
    let limit = 0.5 * d * ((1.0 + m).ln() - 0.5 * (1.0 + 2.0 * m).ln())
        + m * m / (2.0 * m * m + 3.0 * m + 1.0) * proj / (2.0 * sigma2);
    let lower = 0.25 * d * (m / 2.0).ln();
    let upper = 0.25 * d * (m / 2.0 + 1.0).ln() + delta.norm_squared() / (4.0 * sigma2);
    if limit < lower - THM3_SLACK || limit > upper + THM3_SLACK {
        return Err(Error::Numeric(format!(
            "limit {limit} escapes its bounds [{lower}, {upper}]"
        )));
    }
    Ok(Thm3Limit { limit, lower, upper })
}

/// `m` stacked copies of `(X, y + Δ)`.
pub fn make_mismatch_copies(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    delta: &DVector<f64>,
    m: usize,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if y.len() != delta.len() || x.nrows() != y.len() {
        return Err(Error::Argument(format!(
            "X has {} rows, y {} entries, mismatch vector {} entries",
            x.nrows(),
            y.len(),
            delta.len()
        )));
    }
    let n = x.nrows();
    let shifted = y + delta;
    let xs = DMatrix::from_fn(n * m, x.ncols(), |i, j| x[(i % n, j)]);
    let ys = DVector::from_fn(n * m, |i, _| shifted[i % n]);
    Ok((xs, ys))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = substream(seed, 0);
        DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    fn standard_problem(x: DMatrix<f64>, y: DVector<f64>) -> LinRegProblem {
        let d = x.ncols();
        LinRegProblem::new(x, y, 1.0, DVector::zeros(d), DMatrix::identity(d, d)).unwrap()
    }

    #[test]
    fn empty_data_returns_prior() {
        let p = standard_problem(DMatrix::zeros(0, 2), DVector::zeros(0));
        let post = posterior(&p).unwrap();
        assert_eq!(post, GaussianDist::standard(2));
        assert_eq!(log_evidence(&p).unwrap(), 0.0);
    }

    #[test]
    fn scalar_update() {
        let p = standard_problem(DMatrix::from_element(1, 1, 1.0), DVector::from_element(1, 1.0));
        let post = posterior(&p).unwrap();
        assert!((post.mean[0] - 0.5).abs() < 1e-14);
        assert!((post.covariance()[(0, 0)] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn scalar_evidence() {
        let p = standard_problem(DMatrix::from_element(1, 1, 1.0), DVector::from_element(1, 0.0));
        let v = log_evidence(&p).unwrap();
        let expected = -0.5 * (4.0 * std::f64::consts::PI).ln();
        assert!((v - expected).abs() < 1e-14, "{v} vs {expected}");
    }

    #[test]
    fn evidence_matches_dense_gaussian() {
        // Oracle: factor the n×n marginal covariance directly.
        let x = random_matrix(6, 3, 1);
        let y = DVector::from_column_slice(&[0.3, -1.0, 2.0, 0.1, 0.0, 1.5]);
        let mu0 = DVector::from_column_slice(&[0.2, -0.1, 0.4]);
        let s0 = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.0, 0.3, 1.0, 0.2, 0.0, 0.2, 0.5]);
        let p = LinRegProblem::new(x.clone(), y.clone(), 0.7, mu0.clone(), s0.clone()).unwrap();
        let cov = &x * &s0 * x.transpose() + DMatrix::identity(6, 6) * 0.7;
        let dense = GaussianDist::from_covariance(&x * &mu0, cov, "marginal").unwrap();
        let expected = dense.log_density(y.as_slice());
        let v = log_evidence(&p).unwrap();
        assert!((v - expected).abs() < 1e-10, "{v} vs {expected}");
    }

    #[test]
    fn one_row_predictive_identity() {
        let x = random_matrix(20, 3, 2);
        let y = random_matrix(20, 1, 3).column(0).into_owned();
        let p = standard_problem(x, y);
        let xs = DMatrix::from_row_slice(1, 3, &[0.5, -1.0, 2.0]);
        let ys = DVector::from_element(1, 0.7);
        let post = posterior(&p).unwrap();
        let xrow = xs.row(0).transpose();
        let mean = xrow.dot(&post.mean);
        let var = (xrow.transpose() * post.covariance() * &xrow)[(0, 0)] + 1.0;
        let direct = -0.5 * (LN_2PI + var.ln() + (0.7 - mean).powi(2) / var);
        let got = log_ppd_exact_linreg(&p, &xs, &ys).unwrap();
        assert!((got - direct).abs() < 1e-10);

        let joint = GramStats::new(&p.x, &p.y).unwrap().combine(&GramStats::new(&xs, &ys).unwrap());
        let diff = log_evidence_gram(&p.prior, &joint, 1.0).unwrap() - log_evidence(&p).unwrap();
        assert!((diff - direct).abs() < 1e-10);
    }

    #[test]
    fn ppd_chain_rule() {
        let x = random_matrix(10, 2, 4);
        let y = random_matrix(10, 1, 5).column(0).into_owned();
        let p = standard_problem(x, y);
        let xs = random_matrix(2, 2, 6);
        let ys = DVector::from_column_slice(&[1.0, -0.5]);
        let whole = log_ppd_exact_linreg(&p, &xs, &ys).unwrap();
        let first = log_ppd_exact_linreg(&p, &xs.rows(0, 1).into_owned(), &ys.rows(0, 1).into_owned()).unwrap();
        let mut x2 = p.x.clone().insert_rows(10, 1, 0.0);
        x2.row_mut(10).copy_from(&xs.row(0));
        let mut y2 = p.y.clone().insert_rows(10, 1, 0.0);
        y2[10] = ys[0];
        let p2 = standard_problem(x2, y2);
        let second = log_ppd_exact_linreg(&p2, &xs.rows(1, 1).into_owned(), &ys.rows(1, 1).into_owned()).unwrap();
        assert!((whole - first - second).abs() < 1e-10);
    }

    #[test]
    fn posterior_matches_grid_quadrature() {
        let x = random_matrix(5, 2, 7);
        let y = DVector::from_column_slice(&[0.5, 1.0, -0.3, 0.8, 0.0]);
        let p = standard_problem(x, y);
        let post = posterior(&p).unwrap();
        let gram = p.gram().clone();
        let (mut w, mut m0, mut m1, mut s00, mut s01, mut s11) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        let h = 0.01;
        let steps = 1000;
        for i in 0..steps {
            for j in 0..steps {
                let z0 = -5.0 + h * (i as f64 + 0.5);
                let z1 = -5.0 + h * (j as f64 + 0.5);
                let z = DVector::from_column_slice(&[z0, z1]);
                let lp = gram.loglik(&z, 1.0) - 0.5 * z.norm_squared();
                let e = lp.exp();
                w += e;
                m0 += e * z0;
                m1 += e * z1;
                s00 += e * z0 * z0;
                s01 += e * z0 * z1;
                s11 += e * z1 * z1;
            }
        }
        let (m0, m1) = (m0 / w, m1 / w);
        let cov = post.covariance();
        assert!((m0 - post.mean[0]).abs() < 1e-3);
        assert!((m1 - post.mean[1]).abs() < 1e-3);
        assert!((s00 / w - m0 * m0 - cov[(0, 0)]).abs() < 1e-3);
        assert!((s01 / w - m0 * m1 - cov[(0, 1)]).abs() < 1e-3);
        assert!((s11 / w - m1 * m1 - cov[(1, 1)]).abs() < 1e-3);
    }

    #[test]
    fn gaussian_kl_identities() {
        let a = GaussianDist::from_covariance(
            DVector::from_column_slice(&[0.0, 1.0]),
            DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, 2.0])),
            "a",
        )
        .unwrap();
        assert!(a.kl(&a).abs() < 1e-15);
        let b = GaussianDist::from_covariance(
            DVector::from_column_slice(&[1.0, 1.0]),
            DMatrix::from_diagonal(&DVector::from_column_slice(&[4.0, 0.5])),
            "b",
        )
        .unwrap();
        let scalar = |m1: f64, v1: f64, m2: f64, v2: f64| 0.5 * (v1 / v2 + (m1 - m2).powi(2) / v2 - 1.0 + (v2 / v1).ln());
        let expected = scalar(0.0, 1.0, 1.0, 4.0) + scalar(1.0, 2.0, 1.0, 0.5);
        assert!((a.kl(&b) - expected).abs() < 1e-13);
    }

    #[test]
    fn non_pd_covariance_is_named() {
        let e = GaussianDist::from_covariance(DVector::zeros(2), DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]), "S2")
            .unwrap_err();
        assert!(e.to_string().contains("S2"));
    }

    #[test]
    fn limit_reduces_to_clt_without_mismatch() {
        let x = random_matrix(50, 10, 8);
        let t = delta_limit_thm3(&x, &DVector::zeros(50), 1.0, 1).unwrap();
        let expected = 5.0 * (2.0f64.ln() - 0.5 * 3.0f64.ln());
        assert!((t.limit - expected).abs() < 1e-12);
        assert!((t.limit - 0.719_205_181_129_744).abs() < 1e-9);
    }

    #[test]
    fn limit_large_m_projection_term() {
        let x = random_matrix(40, 2, 9);
        let delta = &x * DVector::from_column_slice(&[1.0, -2.0]);
        let big = delta_limit_thm3(&x, &delta, 1.0, 1_000_000).unwrap();
        let clt = 1.0 * (1_000_001f64.ln() - 0.5 * 2_000_001f64.ln());
        assert!(((big.limit - clt) - delta.norm_squared() / 4.0).abs() < 1e-4 * delta.norm_squared());
    }

    #[test]
    fn limit_rank_deficient() {
        let mut x = random_matrix(10, 3, 10);
        let c = x.column(0).into_owned();
        x.set_column(2, &c);
        assert!(matches!(delta_limit_thm3(&x, &DVector::zeros(10), 1.0, 1), Err(Error::Numeric(_))));
    }

    #[test]
    fn mismatch_copies() {
        let x = random_matrix(3, 2, 11);
        let y = DVector::from_column_slice(&[1.0, 2.0, 3.0]);
        let (xs, ys) = make_mismatch_copies(&x, &y, &DVector::zeros(3), 1).unwrap();
        assert_eq!((xs.clone(), ys.clone()), (x.clone(), y.clone()));
        let (xs, ys) = make_mismatch_copies(&x, &y, &DVector::from_element(3, 2.0), 2).unwrap();
        assert_eq!(xs.nrows(), 6);
        assert_eq!(xs.rows(3, 3), xs.rows(0, 3));
        assert_eq!(ys.as_slice(), &[3.0, 4.0, 5.0, 3.0, 4.0, 5.0]);
        assert!(make_mismatch_copies(&x, &y, &DVector::zeros(2), 1).is_err());
    }

    #[test]
    fn delta_linreg_empty_and_nonnegative() {
        let x = random_matrix(30, 3, 12);
        let y = random_matrix(30, 1, 13).column(0).into_owned();
        let p = standard_problem(x.clone(), y.clone());
        assert_eq!(delta_exact_linreg(&p, &DMatrix::zeros(0, 3), &DVector::zeros(0)).unwrap(), 0.0);
        let (xs, ys) = make_mismatch_copies(&x, &y, &DVector::from_element(30, 2.0), 1).unwrap();
        assert!(delta_exact_linreg(&p, &xs, &ys).unwrap() > 0.0);
    }
}
