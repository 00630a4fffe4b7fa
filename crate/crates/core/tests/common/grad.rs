//! Analytic FM gradients against central finite differences.

use cvr_debias::models::{fm_gradients, Example, FmParams};
use cvr_debias::training::losses::{
    imputation_batch_loss, prediction_batch_loss, Cell, ClickedCell, ImputationObjective, ImputationWeight,
    PseudoLabeler,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
pub const DRAWS: usize = 100;

/// Largest relative deviation over all coordinates, with a unit floor on
/// the scale so that coordinates with zero gradient compare absolutely.
pub fn max_rel_deviation(params: &FmParams, analytic: &[f64], loss: impl Fn(&FmParams) -> f64) -> f64 {
    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for k in 0..params.len() {
        let orig = probe.as_slice()[k];
        probe.as_mut_slice()[k] = orig + STEP;
        let up = loss(&probe);
        probe.as_mut_slice()[k] = orig - STEP;
        let down = loss(&probe);
        probe.as_mut_slice()[k] = orig;
        let numeric = (up - down) / (2.0 * STEP);
        let scale = analytic[k].abs().max(numeric.abs()).max(1.0);
        worst = worst.max((analytic[k] - numeric).abs() / scale);
    }
    worst
}

fn random_params(rng: &mut ChaCha8Rng, m: usize, n: usize, dim: usize) -> FmParams {
    let mut p = FmParams::zeros(m, n, dim).unwrap();
    for x in p.as_mut_slice() {
        *x = rng.random_range(-0.8..0.8);
    }
    p
}

fn random_clicked(rng: &mut ChaCha8Rng, m: usize, n: usize, len: usize) -> Vec<ClickedCell> {
    (0..len)
        .map(|_| ClickedCell {
            user: rng.random_range(0..m),
            item: rng.random_range(0..n),
            label: rng.random_range(0..2) as f64,
            propensity: rng.random_range(0.05..0.95),
        })
        .collect()
}

fn shape(rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
    (rng.random_range(1..5), rng.random_range(1..5), rng.random_range(1..4))
}

/// Worst deviation of the weighted cross-entropy gradient over all draws.
pub fn weighted_cross_entropy(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..DRAWS {
        let (m, n, dim) = shape(&mut rng);
        let params = random_params(&mut rng, m, n, dim);
        let batch: Vec<Example> = (0..rng.random_range(1..8))
            .map(|_| Example {
                user: rng.random_range(0..m),
                item: rng.random_range(0..n),
                weight: rng.random_range(0.1..3.0),
                label: rng.random_range(0.0..1.0),
            })
            .collect();
        let l2 = rng.random_range(0.0..0.1);
        let (_, grad) = fm_gradients(&params, &batch, l2).unwrap();
        worst = worst.max(max_rel_deviation(&params, &grad, |p| fm_gradients(p, &batch, l2).unwrap().0));
    }
    worst
}

/// Worst deviation of the imputation objectives, every weight × objective.
pub fn imputation_objectives(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..DRAWS {
        let (m, n, dim) = shape(&mut rng);
        let theta = random_params(&mut rng, m, n, dim);
        let phi = random_params(&mut rng, m, n, dim);
        let len = rng.random_range(1..6);
        let batch = random_clicked(&mut rng, m, n, len);
        let lambda = rng.random_range(0.0..0.1);
        let scale = 1.0 / batch.len() as f64;
        for weight in [ImputationWeight::Mrdr, ImputationWeight::Inverse] {
            for objective in [ImputationObjective::CrossEntropy, ImputationObjective::Squared] {
                let loss = |t: &FmParams| {
                    imputation_batch_loss(t, &phi, &batch, weight, objective, lambda, scale)
                        .unwrap()
                        .0
                };
                let (_, grad) = imputation_batch_loss(&theta, &phi, &batch, weight, objective, lambda, scale).unwrap();
                worst = worst.max(max_rel_deviation(&theta, &grad, loss));
            }
        }
    }
    worst
}

/// Worst deviation of the composite prediction loss over all draws.
pub fn prediction_composite(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for draw in 0..DRAWS {
        let (m, n, dim) = shape(&mut rng);
        let phi = random_params(&mut rng, m, n, dim);
        let pseudo = PseudoLabeler::new(&random_params(&mut rng, m, n, dim), draw % 4 == 0);
        let len = rng.random_range(1..4);
        let mut batch: Vec<Cell> = random_clicked(&mut rng, m, n, len)
            .into_iter()
            .map(Cell::from)
            .collect();
        for _ in 0..rng.random_range(0..5) {
            batch.push(Cell {
                user: rng.random_range(0..m),
                item: rng.random_range(0..n),
                clicked: false,
                label: 0.0,
                propensity: 1.0,
            });
        }
        let mu = rng.random_range(0.0..0.1);
        let scale = 1.0 / batch.len() as f64;
        let (_, grad) = prediction_batch_loss(&phi, &batch, &pseudo, mu, scale).unwrap();
        worst = worst.max(max_rel_deviation(&phi, &grad, |p| {
            prediction_batch_loss(p, &batch, &pseudo, mu, scale).unwrap().0
        }));
    }
    worst
}
