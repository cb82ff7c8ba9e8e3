//! Seeded synthetic datasets.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Binomial, Distribution, Exp, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::conjugate::{summarize, ConjugateModel, NaturalParams, SufficientSummary};
use crate::error::{Error, Result};
use crate::gaussian_linreg::{make_mismatch_copies, LinRegProblem};
use crate::numeric::sigmoid;
use crate::rng::{derive_seed, substream, StreamRng};

const EXPFAM_POINTS: usize = 100;
const BINOMIAL_TRIALS: u64 = 100;
const REGRESSION_ROWS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExpFamKind {
    Normal,
    Exp,
    Binomial,
}

impl ExpFamKind {
    pub const ALL: [ExpFamKind; 3] = [ExpFamKind::Normal, ExpFamKind::Exp, ExpFamKind::Binomial];

    pub fn name(&self) -> &'static str {
        match self {
            ExpFamKind::Normal => "normal",
            ExpFamKind::Exp => "exp",
            ExpFamKind::Binomial => "binomial",
        }
    }

    pub fn model(&self) -> ConjugateModel {
        match self {
            ExpFamKind::Normal => ConjugateModel::NormalKnownVar { sigma2: 1.0, dim: 1 },
            ExpFamKind::Exp => ConjugateModel::ExponentialRate,
            ExpFamKind::Binomial => ConjugateModel::BinomialProb {
                n_trials: BINOMIAL_TRIALS,
            },
        }
    }

    /// Default priors: N(0,1), Gamma(1,1) and Beta(1,1).
    pub fn default_prior(&self) -> NaturalParams {
        match self {
            ExpFamKind::Normal => NaturalParams::scalar(0.0, 1.0),
            ExpFamKind::Exp => NaturalParams::scalar(1.0, 0.0),
            ExpFamKind::Binomial => NaturalParams::scalar(0.0, 0.0),
        }
    }

    fn label(&self) -> u64 {
        *self as u64
    }
}

impl std::str::FromStr for ExpFamKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(ExpFamKind::Normal),
            "exp" => Ok(ExpFamKind::Exp),
            "binomial" => Ok(ExpFamKind::Binomial),
            _ => Err(Error::Argument(format!("unknown model {s:?}; expected normal, exp or binomial"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// 100 observations: train from N(10,1), Exp(0.1), Bin(100,0.1); test from
/// N(5,1), Exp(0.025), Bin(100,0.4).
pub fn gen_expfam(kind: ExpFamKind, split: Split, seed: u64) -> Vec<f64> {
    let mut rng = substream(derive_seed(seed, &[0, kind.label(), split as u64]), 0);
    let train = split == Split::Train;
    match kind {
        ExpFamKind::Normal => {
            let dist = Normal::new(if train { 10.0 } else { 5.0 }, 1.0).expect("valid normal");
            (0..EXPFAM_POINTS).map(|_| dist.sample(&mut rng)).collect()
        }
        ExpFamKind::Exp => {
            let dist = Exp::new(if train { 0.1 } else { 0.025 }).expect("valid rate");
            (0..EXPFAM_POINTS).map(|_| dist.sample(&mut rng)).collect()
        }
        ExpFamKind::Binomial => {
            let dist = Binomial::new(BINOMIAL_TRIALS, if train { 0.1 } else { 0.4 }).expect("valid binomial");
            (0..EXPFAM_POINTS).map(|_| dist.sample(&mut rng) as f64).collect()
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExpFamScenario {
    pub kind: ExpFamKind,
    pub model: ConjugateModel,
    pub prior: NaturalParams,
    pub train_points: Vec<f64>,
    pub test_points: Vec<f64>,
    pub train: SufficientSummary,
    pub test: SufficientSummary,
}

impl ExpFamScenario {
    pub fn generate(kind: ExpFamKind, seed: u64) -> Result<Self> {
        let model = kind.model();
        let train_points = gen_expfam(kind, Split::Train, seed);
        let test_points = gen_expfam(kind, Split::Test, seed);
        let train = summarize(&model, &train_points)?;
        let test = summarize(&model, &test_points)?;
        Ok(Self {
            kind,
            model,
            prior: kind.default_prior(),
            train_points,
            test_points,
            train,
            test,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegressionKind {
    Baseline,
    Mismatch,
    TestSize,
    Dims,
}

impl RegressionKind {
    pub const ALL: [RegressionKind; 4] = [
        RegressionKind::Baseline,
        RegressionKind::Mismatch,
        RegressionKind::TestSize,
        RegressionKind::Dims,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            RegressionKind::Baseline => "baseline",
            RegressionKind::Mismatch => "mismatch",
            RegressionKind::TestSize => "testsize",
            RegressionKind::Dims => "dims",
        }
    }

    fn dim(&self) -> usize {
        if *self == RegressionKind::Dims {
            100
        } else {
            10
        }
    }

    fn copies(&self) -> usize {
        if *self == RegressionKind::TestSize {
            10
        } else {
            1
        }
    }

    fn label(&self) -> u64 {
        *self as u64
    }
}

impl std::str::FromStr for RegressionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(RegressionKind::Baseline),
            "mismatch" => Ok(RegressionKind::Mismatch),
            "testsize" => Ok(RegressionKind::TestSize),
            "dims" => Ok(RegressionKind::Dims),
            _ => Err(Error::Argument(format!(
                "unknown scenario {s:?}; expected baseline, mismatch, testsize or dims"
            ))),
        }
    }
}

fn standard_matrix(rng: &mut StreamRng, rows: usize, cols: usize) -> DMatrix<f64> {
    let v: Vec<f64> = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    DMatrix::from_row_slice(rows, cols, &v)
}

fn standard_vector(rng: &mut StreamRng, n: usize) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

#[derive(Debug, Clone)]
pub struct LinRegScenario {
    pub kind: RegressionKind,
    pub problem: LinRegProblem,
    pub z_true: DVector<f64>,
    /// Constant entry of the mismatch vector.
    pub shift: f64,
    pub copies: usize,
    pub x_test: DMatrix<f64>,
    pub y_test: DVector<f64>,
}

/// Forward-sampled regression with σ² = 1 and a standard normal prior:
/// `z ~ N(0,I)`, `X_ij ~ N(0,1)`, `y ~ N(Xz, I)`. The test set is `m`
/// copies of `(X, y + Δ)` with Δ constant.
pub fn gen_linreg(kind: RegressionKind, seed: u64) -> Result<LinRegScenario> {
    let mut rng = substream(derive_seed(seed, &[1, kind.label()]), 0);
    let d = kind.dim();
    let z = standard_vector(&mut rng, d);
    let x = standard_matrix(&mut rng, REGRESSION_ROWS, d);
    let y = &x * &z + standard_vector(&mut rng, REGRESSION_ROWS);
    let shift = if kind == RegressionKind::Mismatch { 10.0 } else { 2.0 };
    let copies = kind.copies();
    let delta = DVector::from_element(REGRESSION_ROWS, shift);
    let (x_test, y_test) = make_mismatch_copies(&x, &y, &delta, copies)?;
    let problem = LinRegProblem::new(x, y, 1.0, DVector::zeros(d), DMatrix::identity(d, d))?;
    Ok(LinRegScenario {
        kind,
        problem,
        z_true: z,
        shift,
        copies,
        x_test,
        y_test,
    })
}

#[derive(Debug, Clone)]
pub struct LogRegScenario {
    pub kind: RegressionKind,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub z_true: DVector<f64>,
    pub flip: f64,
    pub copies: usize,
    /// Responses of one test copy; every copy shares the training features.
    pub y_test: DVector<f64>,
}

impl LogRegScenario {
    /// The test set with its copies materialized.
    pub fn stacked_test(&self) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.x.nrows();
        let m = self.copies;
        let xs = DMatrix::from_fn(n * m, self.x.ncols(), |i, j| self.x[(i % n, j)]);
        let ys = DVector::from_fn(n * m, |i, _| self.y_test[i % n]);
        (xs, ys)
    }
}

/// Flips the first `⌊flip·n⌋` responses.
pub fn flip_responses(y: &DVector<f64>, flip: f64) -> DVector<f64> {
    let count = ((flip * y.len() as f64).floor() as usize).min(y.len());
    let mut out = y.clone();
    for v in out.iter_mut().take(count) {
        *v = 1.0 - *v;
    }
    out
}

/// Forward-sampled logistic regression: `z ~ N(0,I)`, `X_ij ~ N(0,1)`,
/// `y_i ~ Bernoulli(σ(x_iᵀz))`. The test set is `m` copies of the training
/// rows with the first fraction of responses flipped.
pub fn gen_logreg(kind: RegressionKind, seed: u64) -> Result<LogRegScenario> {
    gen_logreg_with(kind, seed, None)
}

/// As [`gen_logreg`], optionally overriding the flip fraction.
pub fn gen_logreg_with(kind: RegressionKind, seed: u64, flip: Option<f64>) -> Result<LogRegScenario> {
    let mut rng = substream(derive_seed(seed, &[2, kind.label()]), 0);
    let d = kind.dim();
    let z = standard_vector(&mut rng, d);
    let x = standard_matrix(&mut rng, REGRESSION_ROWS, d);
    let a = &x * &z;
    let y = DVector::from_iterator(
        REGRESSION_ROWS,
        a.iter().map(|&ai| if rng.random::<f64>() < sigmoid(ai) { 1.0 } else { 0.0 }),
    );
    let flip = flip.unwrap_or(if kind == RegressionKind::Mismatch { 1.0 } else { 0.1 });
    if !(0.0..=1.0).contains(&flip) {
        return Err(Error::Argument(format!("flip fraction must lie in [0, 1], got {flip}")));
    }
    let y_test = flip_responses(&y, flip);
    Ok(LogRegScenario {
        kind,
        x,
        y,
        z_true: z,
        flip,
        copies: kind.copies(),
        y_test,
    })
}
