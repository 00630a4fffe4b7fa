//! Click propensities `p̂`: a CTR factorization machine trained on click
//! indicators with negative sampling, frozen and clamped before use.

use std::path::Path;

use rand::seq::SliceRandom;

use crate::datasets::ConversionDataset;
use crate::error::{Error, Result};
use crate::matrix::Dense;
use crate::models::{fm_gradients, Adam, AdamConfig, Checkpoint, Example, FmParams};
use crate::numeric::cross_entropy;
use crate::rng::{stream_rng, streams};
use crate::training::early_stop::{EarlyStopping, Direction};
use crate::training::sampler::{sample_unclicked, split_indices};

/// Anything that yields `p̂(u, i)` for arbitrary cells.
pub trait PropensityScore: Sync {
    fn propensity(&self, user: usize, item: usize) -> f64;
}

/// Known propensities, floored.
#[derive(Debug, Clone)]
pub struct MatrixPropensity {
    pub values: Dense<f64>,
    pub floor: f64,
}

impl PropensityScore for MatrixPropensity {
    fn propensity(&self, user: usize, item: usize) -> f64 {
        self.values.get(user, item).max(self.floor)
    }
}

/// The same propensity everywhere.
#[derive(Debug, Clone, Copy)]
pub struct ConstantPropensity(pub f64);

impl PropensityScore for ConstantPropensity {
    fn propensity(&self, _: usize, _: usize) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CtrConfig {
    pub dim: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub l2: f64,
    pub negative_ratio: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Share of clicks held out for early stopping.
    pub holdout_fraction: f64,
    pub clamp_floor: f64,
    /// Undo the shift in base rate caused by negative down-sampling.
    pub calibrate: bool,
    pub seed: u64,
}

impl Default for CtrConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            learning_rate: 1e-3,
            batch_size: 1024,
            l2: 1e-6,
            negative_ratio: 4,
            max_epochs: 100,
            patience: 5,
            holdout_fraction: 0.1,
            clamp_floor: 1e-3,
            calibrate: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropensityModel {
    pub fm: FmParams,
    pub clamp_floor: f64,
    pub negative_ratio: usize,
}

impl PropensityModel {
    pub fn new(fm: FmParams, clamp_floor: f64, negative_ratio: usize) -> Result<Self> {
        if !(clamp_floor > 0.0 && clamp_floor <= 0.1) {
            return Err(Error::Config(format!("clamp floor {clamp_floor} not in (0, 0.1]")));
        }
        if negative_ratio == 0 {
            return Err(Error::Config("negative ratio must be at least 1".into()));
        }
        Ok(Self { fm, clamp_floor, negative_ratio })
    }

    /// FM prediction floored at `clamp_floor`.
    pub fn propensity_of(&self, user: usize, item: usize) -> Result<f64> {
        Ok(self.fm.predict(user, item)?.max(self.clamp_floor))
    }

    pub fn mean_propensity(&self) -> f64 {
        let (m, n) = (self.fm.num_users(), self.fm.num_items());
        let s: f64 = (0..m)
            .flat_map(|u| (0..n).map(move |i| (u, i)))
            .map(|(u, i)| self.propensity(u, i))
            .sum();
        s / (m * n) as f64
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut ck = Checkpoint::new(self.fm.clone());
        ck.meta.insert("kind".into(), "propensity".into());
        ck.meta.insert("clamp_floor".into(), format!("{:?}", self.clamp_floor));
        ck.meta.insert("negative_ratio".into(), self.negative_ratio.to_string());
        ck.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        let get = |k: &str| {
            ck.meta
                .get(k)
                .cloned()
                .ok_or_else(|| Error::Validation(format!("propensity checkpoint lacks '{k}'")))
        };
        let floor = get("clamp_floor")?
            .parse()
            .map_err(|_| Error::Validation("bad clamp_floor".into()))?;
        let ratio = get("negative_ratio")?
            .parse()
            .map_err(|_| Error::Validation("bad negative_ratio".into()))?;
        Self::new(ck.params, floor, ratio)
    }
}

impl PropensityScore for PropensityModel {
    fn propensity(&self, user: usize, item: usize) -> f64 {
        self.fm.predict_unchecked(user, item).max(self.clamp_floor)
    }
}

fn log_loss(fm: &FmParams, examples: &[Example]) -> f64 {
    let s: f64 = examples
        .iter()
        .map(|e| cross_entropy(e.label, fm.predict_unchecked(e.user, e.item)))
        .sum();
    s / examples.len() as f64
}

/// Trains the CTR model on clicked cells (label 1) and, each epoch, fresh
/// uniform draws of `negative_ratio ×` as many unclicked cells (label 0).
pub fn train_ctr(clicks: &ConversionDataset, cfg: &CtrConfig) -> Result<PropensityModel> {
    let (m, n) = (clicks.num_users(), clicks.num_items());
    let total = clicks.universe_size();
    if clicks.num_clicks() == 0 {
        return Err(Error::Sampling("no clicked cells to learn a CTR from".into()));
    }
    if clicks.num_clicks() >= total {
        return Err(Error::Sampling("no unclicked cells to sample negatives from".into()));
    }
    if cfg.batch_size == 0 || cfg.patience == 0 {
        return Err(Error::Config("batch size and patience must be positive".into()));
    }
    let model = PropensityModel::new(FmParams::zeros(1, 1, 1)?, cfg.clamp_floor, cfg.negative_ratio)?;

    let mut rng = stream_rng(cfg.seed, streams::CTR_SAMPLING);
    let (train_idx, hold_idx) = split_indices(clicks.num_clicks(), cfg.holdout_fraction, &mut rng);
    let positive = |k: usize| {
        let e = clicks.events()[k];
        Example { user: e.user as usize, item: e.item as usize, weight: 1.0, label: 1.0 }
    };
    let positives: Vec<Example> = train_idx.iter().map(|&k| positive(k)).collect();
    let mut valid: Vec<Example> = hold_idx.iter().map(|&k| positive(k)).collect();
    let negatives = sample_unclicked(clicks, cfg.negative_ratio * valid.len(), &mut rng)?;
    valid.extend(negatives.into_iter().map(|(u, i)| Example {
        user: u as usize,
        item: i as usize,
        weight: 1.0,
        label: 0.0,
    }));

    let mut fm = FmParams::init(m, n, cfg.dim, cfg.seed, streams::FM_INIT)?;
    let mut opt = Adam::new(AdamConfig { learning_rate: cfg.learning_rate, ..AdamConfig::default() }, fm.len());
    let mut stopper = EarlyStopping::new(cfg.patience, Direction::Minimize)?;
    let mut best = fm.clone();
    let mut examples = Vec::new();
    for epoch in 1..=cfg.max_epochs {
        examples.clear();
        examples.extend_from_slice(&positives);
        let neg = sample_unclicked(clicks, cfg.negative_ratio * positives.len(), &mut rng)?;
        examples.extend(neg.into_iter().map(|(u, i)| Example {
            user: u as usize,
            item: i as usize,
            weight: 1.0,
            label: 0.0,
        }));
        examples.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in examples.chunks(cfg.batch_size) {
            let scale = 1.0 / chunk.len() as f64;
            let scaled: Vec<Example> = chunk.iter().map(|e| Example { weight: scale, ..*e }).collect();
            let (loss, grad) = fm_gradients(&fm, &scaled, cfg.l2)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, msg: "CTR loss is not finite".into() });
            }
            epoch_loss += loss * chunk.len() as f64;
            opt.update(fm.as_mut_slice(), &grad)?;
        }
        let metric = if valid.is_empty() { epoch_loss / examples.len() as f64 } else { log_loss(&fm, &valid) };
        let decision = stopper.observe(metric);
        if decision.improved {
            best.clone_from(&fm);
        }
        log::debug!("ctr epoch {epoch}: train {:.5} holdout {metric:.5}", epoch_loss / examples.len() as f64);
        if decision.stop {
            break;
        }
    }
    if cfg.calibrate {
        let unclicked = (total - clicks.num_clicks()) as f64;
        let rate = (cfg.negative_ratio as f64 * positives.len() as f64 / unclicked).min(1.0);
        // case-control correction: sampled odds = true odds / rate
        best.set_w0(best.w0() + rate.ln());
    }
    let model = PropensityModel { fm: best, ..model };
    log::info!(
        "propensity model: mean p̂ {:.4} vs click rate {:.4} (floor {})",
        model.mean_propensity(),
        clicks.click_rate(),
        cfg.clamp_floor
    );
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::Interaction;

    fn world(clicks: &[(u32, u32)], m: usize, n: usize) -> ConversionDataset {
        ConversionDataset::new(
            clicks
                .iter()
                .map(|&(user, item)| Interaction { user, item, converted: false })
                .collect(),
            m,
            n,
        )
        .unwrap()
    }

    fn quick() -> CtrConfig {
        CtrConfig {
            dim: 4,
            learning_rate: 0.05,
            batch_size: 64,
            l2: 0.0,
            max_epochs: 300,
            patience: 300,
            holdout_fraction: 0.0,
            seed: 5,
            ..CtrConfig::default()
        }
    }

    #[test]
    fn heavy_clicker_gets_high_ctr() {
        let mut c: Vec<(u32, u32)> = (0..10).map(|i| (0, i)).collect();
        c.extend([(1, 3), (2, 7)]);
        let ds = world(&c, 3, 10);
        let model = train_ctr(&ds, &quick()).unwrap();
        for i in 0..10 {
            assert!(model.propensity_of(0, i).unwrap() > 0.8);
        }
    }

    #[test]
    fn deterministic_and_clamped() {
        let ds = world(&[(0, 0), (1, 1), (2, 2), (0, 3)], 3, 5);
        let a = train_ctr(&ds, &quick()).unwrap();
        let b = train_ctr(&ds, &quick()).unwrap();
        assert_eq!(a, b);
        for u in 0..3 {
            for i in 0..5 {
                let p = a.propensity(u, i);
                assert!(p >= a.clamp_floor && 1.0 / p <= 1.0 / a.clamp_floor);
            }
        }
    }

    #[test]
    fn clamp_pass_through_and_floor() {
        let mut fm = FmParams::zeros(1, 2, 1).unwrap();
        *fm.w_mut(1) = -30.0; // item 0: sigmoid(−30) ≈ 9e−14
        *fm.w_mut(2) = (0.3f64 / 0.7).ln();
        let m = PropensityModel::new(fm, 1e-3, 4).unwrap();
        assert_eq!(m.propensity_of(0, 0).unwrap(), 1e-3);
        assert!((m.propensity_of(0, 1).unwrap() - 0.3).abs() < 1e-12);
        assert!(PropensityModel::new(m.fm.clone(), 0.2, 4).is_err());
    }

    #[test]
    fn degenerate_inputs() {
        let full = world(&[(0, 0), (0, 1)], 1, 2);
        assert!(matches!(train_ctr(&full, &quick()), Err(Error::Sampling(_))));
        let none = world(&[], 1, 2);
        assert!(matches!(train_ctr(&none, &quick()), Err(Error::Sampling(_))));
    }

    #[test]
    fn checkpoint_round_trip() {
        let ds = world(&[(0, 0), (1, 1)], 2, 3);
        let m = train_ctr(&ds, &CtrConfig { max_epochs: 3, ..quick() }).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        m.save(f.path()).unwrap();
        assert_eq!(PropensityModel::load(f.path()).unwrap(), m);
    }
}
