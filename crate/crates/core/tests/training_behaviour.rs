mod common;

use cvr_debias::datasets::{ConversionDataset, Interaction};
use cvr_debias::propensity::{train_ctr, ConstantPropensity, CtrConfig, PropensityScore};
use cvr_debias::synthetic::{mnar_mar_benchmark, sample_world};
use cvr_debias::training::{run_method, Method, SampleRatio, TrainConfig};

fn all_converted(m: usize, n: usize) -> ConversionDataset {
    let ev = (0..m as u32)
        .flat_map(|u| (0..n as u32).map(move |i| Interaction { user: u, item: i, converted: true }))
        .collect();
    ConversionDataset::new(ev, m, n).unwrap()
}

#[test]
fn loss_decreases_monotonically_on_a_trivial_world() {
    let ds = all_converted(3, 4);
    for method in Method::ALL {
        for ratio in [SampleRatio::Ratio(0), SampleRatio::All] {
            let cfg = TrainConfig {
                method,
                dim: 3,
                batch_size: 12,
                learning_rate: 0.01,
                sample_ratio: ratio,
                max_epochs: 50,
                early_stop_patience: 100,
                ..TrainConfig::default()
            };
            // Every cell is clicked, so the true propensity is 1 and each
            // epoch is a single full-batch step on a fixed objective.
            let out = run_method(&ds, &ds, &ConstantPropensity(1.0), &cfg).unwrap();
            assert_eq!(out.log.len(), 50);
            for w in out.log.windows(2) {
                assert!(
                    w[1].train_loss < w[0].train_loss,
                    "{method} {ratio}: epoch {} loss {} after {}",
                    w[1].epoch,
                    w[1].train_loss,
                    w[0].train_loss
                );
            }
        }
    }
}

#[test]
fn early_stopping_keeps_best_epoch_parameters() {
    let dir = tempfile::tempdir().unwrap();
    common::write_benchmark(dir.path(), 20, 24, 4);
    let mnar = ConversionDataset::load(&dir.path().join("mnar.txt")).unwrap();
    let (train, valid) = cvr_debias::datasets::split_mnar(&mnar, Default::default()).unwrap();
    let cfg = TrainConfig {
        method: Method::MrdrDl,
        dim: 4,
        batch_size: 32,
        learning_rate: 0.05,
        max_epochs: 40,
        early_stop_patience: 3,
        ..TrainConfig::default()
    };
    let out = run_method(&train, &valid, &ConstantPropensity(0.2), &cfg).unwrap();
    let best = out
        .log
        .iter()
        .min_by(|a, b| a.valid_metric.total_cmp(&b.valid_metric))
        .unwrap();
    assert_eq!(best.epoch, out.best_epoch);
    assert_eq!(best.valid_metric, out.best_valid);
    if out.log.len() < cfg.max_epochs {
        assert_eq!(out.log.len(), out.best_epoch + cfg.early_stop_patience);
    }
}

#[test]
fn ctr_model_is_calibrated_within_factor_two() {
    let gt = common::tiny_ground_truth(40, 50, 9);
    let world = sample_world(&gt, 9);
    let (mnar, _) = mnar_mar_benchmark(&world, 5, 9).unwrap();
    let cfg = CtrConfig { dim: 8, max_epochs: 30, batch_size: 128, learning_rate: 0.01, ..CtrConfig::default() };
    let model = train_ctr(&mnar, &cfg).unwrap();
    let ratio = model.mean_propensity() / mnar.click_rate();
    assert!((0.5..=2.0).contains(&ratio), "mean p̂ / p_e = {ratio}");
    for u in 0..40 {
        for i in 0..50 {
            assert!(model.propensity(u, i) >= cfg.clamp_floor);
        }
    }
}

#[test]
fn ctr_model_learns_a_heavy_clicker() {
    let (m, n) = (6, 12);
    let mut ev: Vec<Interaction> = (0..n as u32).map(|i| Interaction { user: 0, item: i, converted: false }).collect();
    for u in 1..m as u32 {
        ev.push(Interaction { user: u, item: u, converted: false });
    }
    let ds = ConversionDataset::new(ev, m, n).unwrap();
    let cfg = CtrConfig {
        dim: 4,
        learning_rate: 0.05,
        batch_size: 16,
        max_epochs: 200,
        patience: 200,
        holdout_fraction: 0.0,
        calibrate: false,
        ..CtrConfig::default()
    };
    let model = train_ctr(&ds, &cfg).unwrap();
    for i in 0..n {
        let p = model.propensity(0, i);
        assert!(p > 0.8, "item {i}: {p}");
    }
}
