//! δ and the signal-to-noise ratio of the naive PPD estimator.
//!
//! `δ = ½ log(E[R₁²]/E[R₁]²)` fixes the SNR of a `K`-sample average at
//! `√K/√(e^{2δ}−1)`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conjugate::{kl, log_partition, posterior_params, ConjugateModel, NaturalParams, SufficientSummary};
use crate::error::{Error, Result};
use crate::gaussian_linreg::GaussianDist;

/// Above this δ, `expm1(2δ)` is replaced by `exp(2δ)` to avoid overflow.
pub const LOG_BRANCH_DELTA: f64 = 350.0;

/// Negative δ within this distance of zero is floating-point slop.
const NEGATIVE_DELTA_SLOP: f64 = 1e-12;

/// Allowed relative disagreement between the two δ forms.
const FORM_AGREEMENT: f64 = 1e-8;

/// `SNR(R_K)`; `+inf` when δ = 0.
pub fn snr_from_delta(delta: f64, k: u64) -> Result<f64> {
    check_k(k)?;
    if !(delta >= 0.0) {
        return Err(Error::Argument(format!("delta must be non-negative, got {delta}")));
    }
    if delta == 0.0 {
        return Ok(f64::INFINITY);
    }
    let single = if delta > LOG_BRANCH_DELTA {
        (-delta - 0.5 * (-(-2.0 * delta).exp_m1()).ln()).exp()
    } else {
        1.0 / (2.0 * delta).exp_m1().sqrt()
    };
    Ok((k as f64).sqrt() * single)
}

/// `log10 SNR(R_K)`, finite for any positive δ.
pub fn log10_snr_from_delta(delta: f64, k: u64) -> Result<f64> {
    check_k(k)?;
    if !(delta > 0.0) {
        return Err(Error::Argument(format!("delta must be positive, got {delta}")));
    }
    let log_expm1 = if delta > LOG_BRANCH_DELTA {
        2.0 * delta
    } else {
        (2.0 * delta).exp_m1().ln()
    };
    Ok((0.5 * (k as f64).ln() - 0.5 * log_expm1) / std::f64::consts::LN_10)
}

fn check_k(k: u64) -> Result<()> {
    if k == 0 {
        return Err(Error::Argument("K must be at least 1".into()));
    }
    Ok(())
}

/// δ with both of its representations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaBreakdown {
    pub delta: f64,
    pub kl_left: f64,
    pub kl_right: f64,
    pub b_form: f64,
}

/// δ for the exact conjugate posterior given `data`.
pub fn delta_exact(
    model: &ConjugateModel,
    xi0: &NaturalParams,
    data: &SufficientSummary,
    test: &SufficientSummary,
) -> Result<DeltaBreakdown> {
    delta_approx(model, &posterior_params(xi0, data), test)
}

/// δ when the approximate posterior is the conjugate-family member `η`.
pub fn delta_approx(model: &ConjugateModel, eta: &NaturalParams, test: &SufficientSummary) -> Result<DeltaBreakdown> {
    let xi1 = eta.clone();
    let xi3 = eta.shifted_by(test);
    let xi2 = eta.shifted_by(&test.scale(2.0));
    let b1 = log_partition(model, &xi1)?;
    let b2 = log_partition(model, &xi2)?;
    let b3 = log_partition(model, &xi3)?;
    let b_form = 0.5 * (b1 + b2) - b3;
    let kl_left = kl(model, &xi3, &xi1)?;
    let kl_right = kl(model, &xi3, &xi2)?;
    let kl_form = 0.5 * kl_left + 0.5 * kl_right;
    if (b_form - kl_form).abs() > FORM_AGREEMENT * b_form.abs().max(1.0) {
        return Err(Error::Numeric(format!(
            "delta forms disagree: log-partition form {b_form}, KL form {kl_form}"
        )));
    }
    Ok(DeltaBreakdown {
        delta: clamp_delta(b_form)?,
        kl_left,
        kl_right,
        b_form,
    })
}

fn clamp_delta(delta: f64) -> Result<f64> {
    if delta >= 0.0 {
        Ok(delta)
    } else if delta >= -NEGATIVE_DELTA_SLOP {
        Ok(0.0)
    } else {
        Err(Error::Numeric(format!("delta is negative: {delta}")))
    }
}

/// Bayesian-CLT approximation `(d/2) log((1+r)/√(1+2r))`, `r = n_test/n_train`.
pub fn delta_clt(d: usize, n_train: f64, n_test: f64) -> Result<f64> {
    if d == 0 || !(n_train > 0.0) || !(n_test > 0.0) {
        return Err(Error::Argument(format!(
            "delta_clt needs positive arguments, got d={d}, n_train={n_train}, n_test={n_test}"
        )));
    }
    let r = n_test / n_train;
    Ok(0.5 * d as f64 * (r.ln_1p() - 0.5 * (2.0 * r).ln_1p()))
}

/// δ for Gaussian posteriors: `N₁` given `D`, `N₂` given `D+2D*`, `N₃` given `D+D*`.
pub fn delta_gaussians(
    mu1: &DVector<f64>,
    s1: &DMatrix<f64>,
    mu2: &DVector<f64>,
    s2: &DMatrix<f64>,
    mu3: &DVector<f64>,
    s3: &DMatrix<f64>,
) -> Result<f64> {
    let n1 = GaussianDist::from_covariance(mu1.clone(), s1.clone(), "S1")?;
    let n2 = GaussianDist::from_covariance(mu2.clone(), s2.clone(), "S2")?;
    let n3 = GaussianDist::from_covariance(mu3.clone(), s3.clone(), "S3")?;
    clamp_delta(0.5 * n3.kl(&n1) + 0.5 * n3.kl(&n2))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContourCell {
    pub test_mean: f64,
    pub test_size: f64,
    pub delta: Option<f64>,
    pub log10_snr: Option<f64>,
}

/// δ and `log10 SNR(R_K)` over a grid of test means and sizes.
///
/// Cells are ordered size-major; cells whose parameters leave the domain
/// carry `None`.
pub fn contour_grid(
    model: &ConjugateModel,
    train: &SufficientSummary,
    xi0: &NaturalParams,
    mean_grid: &[f64],
    size_grid: &[f64],
    k: u64,
) -> Vec<ContourCell> {
    let cells: Vec<(f64, f64)> = size_grid
        .iter()
        .flat_map(|&s| mean_grid.iter().map(move |&m| (m, s)))
        .collect();
    cells
        .par_iter()
        .map(|&(test_mean, test_size)| {
            let delta = if test_size == 0.0 {
                Some(0.0)
            } else if test_size > 0.0 {
                let mut t_sum = vec![0.0; model.dim()];
                t_sum[0] = test_mean * test_size;
                let test = SufficientSummary {
                    t_sum,
                    count: test_size,
                    log_h_sum: 0.0,
                };
                delta_exact(model, xi0, train, &test).ok().map(|b| b.delta)
            } else {
                None
            };
            let log10_snr = match delta {
                Some(d) if d == 0.0 => Some(f64::INFINITY),
                Some(d) => log10_snr_from_delta(d, k).ok(),
                None => None,
            };
            ContourCell {
                test_mean,
                test_size,
                delta,
                log10_snr,
            }
        })
        .collect()
}
