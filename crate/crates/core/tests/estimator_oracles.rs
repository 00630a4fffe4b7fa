//! Monte-Carlo checks of the estimators against their closed forms, and of
//! the world sampler against its Bernoulli parameters.

mod common;

use cvr_debias::estimators::{
    dr_bias, dr_loss, dr_variance, ideal_loss, ips_loss, ips_variance, prediction_errors, LossInputs, Normalizer,
};
use cvr_debias::matrix::Dense;
use cvr_debias::synthetic::{sample_world, GroundTruth};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Fixture {
    p: Dense<f64>,
    conversions: Dense<u8>,
    predicted: Dense<f64>,
    imputed: Dense<f64>,
}

fn fixture(m: usize, n: usize, seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Fixture {
        p: Dense::from_fn(m, n, |_, _| rng.random_range(0.05..0.95)),
        conversions: Dense::from_fn(m, n, |_, _| rng.random_bool(0.4) as u8),
        predicted: Dense::from_fn(m, n, |_, _| rng.random_range(0.05..0.95)),
        imputed: Dense::from_fn(m, n, |_, _| rng.random_range(0.0..2.0)),
    }
}

fn resample(p: &Dense<f64>, rng: &mut ChaCha8Rng) -> Dense<u8> {
    Dense::from_fn(p.rows(), p.cols(), |u, i| (rng.random::<f64>() < p.get(u, i)) as u8)
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (mean, xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0))
}

#[test]
fn dr_and_ips_are_unbiased_with_true_propensities() {
    for seed in 0..3 {
        let f = fixture(12, 12, seed);
        let ideal = ideal_loss(&f.conversions, &f.predicted).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let (mut dr, mut ips) = (Vec::new(), Vec::new());
        for _ in 0..4000 {
            let clicks = resample(&f.p, &mut rng);
            let inp = LossInputs {
                clicks: &clicks,
                conversions: &f.conversions,
                predicted: &f.predicted,
                propensity: &f.p,
                imputed: Some(&f.imputed),
            };
            dr.push(dr_loss(&inp, 1e-4).unwrap());
            ips.push(ips_loss(&inp, Normalizer::Universe, 1e-4).unwrap());
        }
        for xs in [&dr, &ips] {
            let (mean, var) = mean_var(xs);
            let se = (var / xs.len() as f64).sqrt();
            assert!((mean - ideal).abs() < 4.0 * se, "seed {seed}: {mean} vs {ideal} (se {se})");
        }
    }
}

#[test]
fn dr_bias_formula_matches_monte_carlo() {
    let f = fixture(10, 10, 7);
    // Misspecified propensities: p̂ = p scaled and clipped.
    let p_hat = f.p.map(|q| (q * 1.6).min(0.99));
    let e = prediction_errors(&f.conversions, &f.predicted).unwrap();
    // ê = 0.3e keeps δ one-signed so the bias cannot cancel.
    let e_hat = e.map(|x| 0.3 * x);
    let ideal = ideal_loss(&f.conversions, &f.predicted).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let draws: Vec<f64> = (0..20_000)
        .map(|_| {
            let clicks = resample(&f.p, &mut rng);
            let inp = LossInputs {
                clicks: &clicks,
                conversions: &f.conversions,
                predicted: &f.predicted,
                propensity: &p_hat,
                imputed: Some(&e_hat),
            };
            dr_loss(&inp, 1e-4).unwrap()
        })
        .collect();
    let (mean, var) = mean_var(&draws);
    let se = (var / draws.len() as f64).sqrt();
    let bias = dr_bias(&f.p, &p_hat, &e, &e_hat).unwrap();
    assert!(bias > 10.0 * se, "fixture should be visibly biased");
    assert!(((mean - ideal).abs() - bias).abs() < 4.0 * se);
}

#[test]
fn variance_formulas_match_monte_carlo() {
    let f = fixture(10, 10, 11);
    let e = prediction_errors(&f.conversions, &f.predicted).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut dr, mut ips) = (Vec::new(), Vec::new());
    for _ in 0..40_000 {
        let clicks = resample(&f.p, &mut rng);
        let inp = LossInputs {
            clicks: &clicks,
            conversions: &f.conversions,
            predicted: &f.predicted,
            propensity: &f.p,
            imputed: Some(&f.imputed),
        };
        dr.push(dr_loss(&inp, 1e-4).unwrap());
        ips.push(ips_loss(&inp, Normalizer::Universe, 1e-4).unwrap());
    }
    let dr_theory = dr_variance(&f.p, &f.p, &e, &f.imputed).unwrap();
    let ips_theory = ips_variance(&f.p, &f.p, &e).unwrap();
    assert!((mean_var(&dr).1 / dr_theory - 1.0).abs() < 0.04);
    assert!((mean_var(&ips).1 / ips_theory - 1.0).abs() < 0.04);
}

#[test]
fn click_frequencies_follow_true_ctr() {
    let gt = GroundTruth::from_ratings(
        Dense::from_fn(4, 5, |u, i| 1 + ((u + i) % 5) as u8),
        1.0,
        0.5,
        cvr_debias::synthetic::DEFAULT_RATING_MARGINAL,
    )
    .unwrap();
    let reps = 4000;
    let mut clicks = Dense::filled(4, 5, 0usize);
    let mut convs = Dense::filled(4, 5, 0usize);
    for seed in 0..reps {
        let w = sample_world(&gt, seed);
        for (u, i, o) in w.clicks.indexed() {
            clicks.set(u, i, clicks.get(u, i) + o as usize);
            convs.set(u, i, convs.get(u, i) + w.conversions.get(u, i) as usize);
        }
    }
    for (u, i, c) in clicks.indexed() {
        for (count, p) in [(c, gt.true_ctr.get(u, i)), (convs.get(u, i), gt.true_cvr.get(u, i))] {
            let freq = count as f64 / reps as f64;
            let se = (p * (1.0 - p) / reps as f64).sqrt();
            assert!((freq - p).abs() < 4.5 * se, "({u},{i}): {freq} vs {p}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dr_variance_bounded_by_ips_when_imputation_within_twice_error(
        cells in prop::collection::vec((0.01f64..1.0, 0.01f64..1.0, 0.0f64..5.0, 0.0f64..1.0), 1..40)
    ) {
        let n = cells.len();
        let p = Dense::from_vec(1, n, cells.iter().map(|c| c.0).collect()).unwrap();
        let p_hat = Dense::from_vec(1, n, cells.iter().map(|c| c.1).collect()).unwrap();
        let e = Dense::from_vec(1, n, cells.iter().map(|c| c.2).collect()).unwrap();
        let e_hat = Dense::from_vec(1, n, cells.iter().map(|c| c.2 * 2.0 * c.3).collect()).unwrap();
        let dr = dr_variance(&p, &p_hat, &e, &e_hat).unwrap();
        let ips = ips_variance(&p, &p_hat, &e).unwrap();
        prop_assert!(dr <= ips * (1.0 + 1e-12));
    }

    #[test]
    fn exact_imputation_removes_dr_variance(seed in 0u64..1000) {
        let f = fixture(5, 6, seed);
        let e = prediction_errors(&f.conversions, &f.predicted).unwrap();
        prop_assert_eq!(dr_variance(&f.p, &f.p, &e, &e).unwrap(), 0.0);
        prop_assert_eq!(dr_bias(&f.p, &f.p.map(|q| q * 0.5), &e, &e).unwrap(), 0.0);
    }
}
