//! Signal-to-noise analysis of Monte Carlo estimators of the predictive
//! posterior density (PPD), and learned importance sampling as a remedy.
//!
//! The crate is organised bottom-up:
//!
//! - [`conjugate`]: conjugate exponential-family machinery (natural
//!   parameters, log-partitions, KL divergences, exact log PPD).
//! - [`snr`]: the δ statistic that controls the SNR of the naive estimator,
//!   under every closed-form regime, plus contour grids.
//! - [`gaussian_linreg`]: Bayesian linear regression closed forms and the
//!   mismatched-copy limit with its bounds.
//! - [`targets`]: differentiable unnormalized log-densities used by
//!   black-box variational inference.
//! - [`vi`]: full-rank Gaussian family, Laplace initialisation, Adam, ELBO
//!   and IW-ELBO (DReG) gradients.
//! - [`estimators`]: naive MC and importance-sampling PPD estimators and
//!   their empirical diagnostics.
//! - [`scenarios`]: seeded synthetic experiments and file output.

pub mod conjugate;
pub mod error;
pub mod estimators;
pub mod gaussian_linreg;
pub mod numeric;
pub mod rng;
pub mod scenarios;
pub mod snr;
pub mod targets;
pub mod vi;

pub use error::{Error, Result};
