mod common;

use common::{integrate, models, random_summary, random_xi, rel, rng};
use ppdsnr::conjugate::{kl, log_partition, log_ppd_exact, posterior_params, to_standard, ConjugateModel, NaturalParams, StandardForm};
use ppdsnr::snr::delta_exact;
use rand::Rng;

fn grad_b(model: &ConjugateModel, xi: &NaturalParams) -> (f64, f64) {
    let b = |t: f64, n: f64| log_partition(model, &NaturalParams::scalar(t, n)).unwrap();
    let (t, n) = (xi.tau[0], xi.nu);
    let ht = 1e-5 * t.abs().max(1e-2);
    let hn = 1e-5 * n.abs().max(1e-2);
    let gt = (b(t + ht, n) - b(t - ht, n)) / (2.0 * ht);
    let gn = (b(t, n + hn) - b(t, n - hn)) / (2.0 * hn);
    (gt, gn)
}

#[test]
fn kl_is_bregman_divergence_of_log_partition() {
    let mut r = rng(1);
    for model in models() {
        for _ in 0..200 {
            let a = random_xi(&model, &mut r);
            let mut b = random_xi(&model, &mut r);
            // Nearby pairs keep the identity well conditioned for finite differences.
            if r.random_bool(0.5) {
                b = NaturalParams::scalar(a.tau[0] * r.random_range(0.8..1.25), a.nu * r.random_range(0.8..1.25) + 0.1);
            }
            if log_partition(&model, &b).is_err() {
                continue;
            }
            let (gt, gn) = grad_b(&model, &a);
            let bregman = log_partition(&model, &b).unwrap() - log_partition(&model, &a).unwrap()
                - (b.tau[0] - a.tau[0]) * gt
                - (b.nu - a.nu) * gn;
            let k = kl(&model, &a, &b).unwrap();
            assert!(k >= 0.0, "{model:?} {a:?} {b:?}");
            assert!(rel(k, bregman) < 1e-6, "{model:?} {a:?} {b:?}: {k} vs {bregman}");
            assert!(kl(&model, &a, &a).unwrap().abs() < 1e-12);
        }
    }
}

#[test]
fn log_partition_is_midpoint_convex() {
    let mut r = rng(2);
    for model in models() {
        for _ in 0..100 {
            let a = random_xi(&model, &mut r);
            let b = random_xi(&model, &mut r);
            let mid = NaturalParams::scalar(0.5 * (a.tau[0] + b.tau[0]), 0.5 * (a.nu + b.nu));
            let lhs = log_partition(&model, &mid).unwrap();
            let rhs = 0.5 * (log_partition(&model, &a).unwrap() + log_partition(&model, &b).unwrap());
            assert!(lhs <= rhs + 1e-9 * rhs.abs().max(1.0), "{model:?}: {lhs} > {rhs}");
        }
    }
}

fn total_mass(model: &ConjugateModel, xi: &NaturalParams) -> f64 {
    let b = log_partition(model, xi).unwrap();
    match *model {
        ConjugateModel::NormalKnownVar { sigma2, .. } => {
            let (t, nu) = (xi.tau[0], xi.nu);
            let (mean, sd) = (t / nu, (sigma2 / nu).sqrt());
            let f = |z: f64| (t * z / sigma2 - nu * z * z / (2.0 * sigma2) - b).exp();
            integrate(&f, mean - 15.0 * sd, mean + 15.0 * sd, 1e-10)
        }
        ConjugateModel::ExponentialRate => {
            // φ = ln z, A = z; integrate over w = ln z.
            let f = |w: f64| {
                let z = w.exp();
                (xi.nu * w - xi.tau[0] * z - b + w).exp()
            };
            let StandardForm::Gamma { shape, rate } = to_standard(model, xi).unwrap() else { unreachable!() };
            let centre = (shape / rate).ln();
            let sd = 1.0 / shape.sqrt();
            integrate(&f, centre - 15.0 * sd - 40.0 / shape, centre + 15.0 * sd + 5.0, 1e-10)
        }
        ConjugateModel::BinomialProb { n_trials } => {
            // φ = logit p, A = -n ln(1-p); integrate over the logit.
            let n = n_trials as f64;
            let f = |w: f64| {
                let ln_p = -(-w).exp().ln_1p();
                let ln_q = -w.exp().ln_1p();
                (xi.tau[0] * w + xi.nu * n * ln_q - b + ln_p + ln_q).exp()
            };
            let StandardForm::Beta { alpha, beta } = to_standard(model, xi).unwrap() else { unreachable!() };
            let centre = (alpha / beta).ln();
            let sd = (1.0 / alpha + 1.0 / beta).sqrt();
            integrate(&f, centre - 15.0 * sd - 40.0 / alpha, centre + 15.0 * sd + 40.0 / beta, 1e-10)
        }
    }
}

#[test]
fn natural_form_densities_integrate_to_one() {
    let mut r = rng(3);
    for model in models() {
        for _ in 0..20 {
            let xi = random_xi(&model, &mut r);
            let mass = total_mass(&model, &xi);
            assert!((mass - 1.0).abs() < 1e-5, "{model:?} {xi:?}: {mass}");
        }
    }
}

#[test]
fn delta_forms_agree_and_are_nonnegative() {
    let mut r = rng(4);
    for model in models() {
        for _ in 0..1000 {
            let xi0 = random_xi(&model, &mut r);
            let n_train = r.random_range(0..200);
            let n_test = r.random_range(0..60);
            let data = random_summary(&model, n_train, &mut r);
            let test = random_summary(&model, n_test, &mut r);
            let d = delta_exact(&model, &xi0, &data, &test).unwrap();
            let s1 = posterior_params(&xi0, &data);
            let s2 = posterior_params(&s1, &test.scale(2.0));
            let s3 = posterior_params(&s1, &test);
            let b = |xi: &NaturalParams| log_partition(&model, xi).unwrap();
            let b_form = 0.5 * (b(&s1) + b(&s2)) - b(&s3);
            let kl_form = 0.5 * kl(&model, &s3, &s1).unwrap() + 0.5 * kl(&model, &s3, &s2).unwrap();
            assert!(d.delta >= 0.0);
            assert!((b_form - kl_form).abs() <= 1e-8 * b_form.abs().max(1.0), "{b_form} vs {kl_form}");
            assert!((d.delta - b_form.max(0.0)).abs() <= 1e-8 * b_form.abs().max(1.0));
        }
    }
}

#[test]
fn delta_is_invariant_to_base_measure() {
    let mut r = rng(5);
    for model in models() {
        let xi0 = random_xi(&model, &mut r);
        let data = random_summary(&model, 50, &mut r);
        let test = random_summary(&model, 20, &mut r);
        let base = delta_exact(&model, &xi0, &data, &test).unwrap().delta;
        let mut data2 = data.clone();
        data2.log_h_sum += 123.0;
        let mut test2 = test.clone();
        test2.log_h_sum -= 77.0;
        assert_eq!(delta_exact(&model, &xi0, &data2, &test2).unwrap().delta, base);
    }
}

#[test]
fn ppd_chain_rule_on_random_splits() {
    let mut r = rng(6);
    for model in models() {
        for _ in 0..50 {
            let xi0 = random_xi(&model, &mut r);
            let data = random_summary(&model, r.random_range(0..100), &mut r);
            let t1 = random_summary(&model, r.random_range(0..30), &mut r);
            let t2 = random_summary(&model, r.random_range(0..30), &mut r);
            let whole = log_ppd_exact(&model, &xi0, &data, &t1.combine(&t2)).unwrap();
            let first = log_ppd_exact(&model, &xi0, &data, &t1).unwrap();
            let second = log_ppd_exact(&model, &xi0, &data.combine(&t1), &t2).unwrap();
            assert!((whole - first - second).abs() <= 1e-10 * whole.abs().max(1.0), "{whole} vs {}", first + second);
        }
    }
}
