#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use ppdsnr::conjugate::{summarize, ConjugateModel, NaturalParams, SufficientSummary};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Exp, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn models() -> Vec<ConjugateModel> {
    vec![
        ConjugateModel::normal(1.0, 1).unwrap(),
        ConjugateModel::normal(2.5, 1).unwrap(),
        ConjugateModel::exponential(),
        ConjugateModel::binomial(100).unwrap(),
    ]
}

/// A random natural parameter well inside the domain.
pub fn random_xi(model: &ConjugateModel, rng: &mut impl Rng) -> NaturalParams {
    match *model {
        ConjugateModel::NormalKnownVar { dim, .. } => {
            let nu = rng.random_range(0.2..300.0);
            NaturalParams::new((0..dim).map(|_| nu * rng.random_range(-20.0..20.0)).collect(), nu)
        }
        ConjugateModel::ExponentialRate => {
            NaturalParams::scalar(rng.random_range(0.05..200.0), rng.random_range(-0.5..300.0))
        }
        ConjugateModel::BinomialProb { n_trials } => {
            let a: f64 = rng.random_range(0.5..400.0);
            let b: f64 = rng.random_range(0.5..400.0);
            NaturalParams::scalar(a - 1.0, (a + b - 2.0) / n_trials as f64)
        }
    }
}

/// Raw observations summarized under `model`.
pub fn random_summary(model: &ConjugateModel, n: usize, rng: &mut impl Rng) -> SufficientSummary {
    let points: Vec<f64> = match *model {
        ConjugateModel::NormalKnownVar { dim, .. } => {
            let centre: f64 = rng.random_range(-15.0..15.0);
            (0..n * dim)
                .map(|_| centre + 2.0 * rng.sample::<f64, _>(StandardNormal))
                .collect()
        }
        ConjugateModel::ExponentialRate => {
            let rate: f64 = rng.random_range(0.02..5.0);
            let e = Exp::new(rate).unwrap();
            (0..n).map(|_| e.sample(rng)).collect()
        }
        ConjugateModel::BinomialProb { n_trials } => {
            let p: f64 = rng.random_range(0.02..0.98);
            let b = Binomial::new(n_trials, p).unwrap();
            (0..n).map(|_| b.sample(rng) as f64).collect()
        }
    };
    summarize(model, &points).unwrap()
}

/// Adaptive Simpson quadrature of `f` on `[a, b]`, started from 64 panels so
/// narrow peaks are not missed.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    const PANELS: usize = 64;
    let h = (b - a) / PANELS as f64;
    (0..PANELS)
        .map(|i| simpson(f, a + i as f64 * h, a + (i + 1) as f64 * h, tol / PANELS as f64))
        .sum()
}

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn step(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, tol, 40)
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn random_vector(n: usize, rng: &mut impl Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Relative error with a unit floor.
pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}
