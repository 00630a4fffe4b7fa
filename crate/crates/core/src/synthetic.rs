//! Semi-synthetic ground truth built from an explicit-rating dataset.
//!
//! Pipeline: complete the rating matrix with biased matrix factorization,
//! discretize the completion to a target rating marginal, map levels to
//! click and conversion probabilities, then draw Bernoulli worlds. The
//! estimator comparison additionally needs adversarial predicted-CVR
//! matrices, noisy propensities and heuristic imputed errors.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::datasets::{ConversionDataset, EventTable, Interaction};
use crate::error::{Error, Result};
use crate::matrix::Dense;
use crate::numeric::{compensated_sum, cross_entropy, PROB_CLAMP};
use crate::rng::{cell_uniform, stream_rng, streams};

/// Conversion rate attached to each discretized rating level 1..=5.
pub const CVR_LEVELS: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];

/// Default rating marginal. Not a published value: a skewed plausibility
/// default that every report records next to its results.
pub const DEFAULT_RATING_MARGINAL: [f64; 5] = [0.53, 0.24, 0.14, 0.06, 0.03];

#[derive(Debug, Clone, PartialEq)]
pub struct MfConfig {
    pub rank: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub seed: u64,
}

impl Default for MfConfig {
    fn default() -> Self {
        Self {
            rank: 64,
            epochs: 200,
            learning_rate: 0.005,
            l2: 1e-4,
            seed: 0,
        }
    }
}

/// Fitted biased matrix factorization plus its training RMSE.
#[derive(Debug, Clone)]
pub struct Completion {
    pub predictions: Dense<f64>,
    pub train_rmse: f64,
}

/// Fits `μ + b_u + b_i + ⟨p_u, q_i⟩` on the observed ratings with seeded SGD
/// and returns the dense prediction over the whole grid.
pub fn complete_ratings(events: &EventTable, cfg: &MfConfig) -> Result<Completion> {
    if events.is_empty() {
        return Err(Error::Validation("cannot complete an empty rating table".into()));
    }
    if cfg.rank == 0 {
        return Err(Error::Config("rank must be at least 1".into()));
    }
    let (m, n, k) = (events.num_users(), events.num_items(), cfg.rank);
    let mut init = stream_rng(cfg.seed, streams::MF_INIT);
    let mut pu: Vec<f64> = (0..m * k).map(|_| init.random_range(-0.1..0.1)).collect();
    let mut qi: Vec<f64> = (0..n * k).map(|_| init.random_range(-0.1..0.1)).collect();
    let mut bu = vec![0.0; m];
    let mut bi = vec![0.0; n];
    let rows = events.rows();
    let mu = compensated_sum(rows.iter().map(|r| r.rating as f64)) / rows.len() as f64;

    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut shuffle = stream_rng(cfg.seed, streams::MF_SHUFFLE);
    let (lr, reg) = (cfg.learning_rate, cfg.l2);
    let mut sq_err = 0.0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle);
        sq_err = 0.0;
        for &t in &order {
            let r = rows[t];
            let (u, i) = (r.user as usize, r.item as usize);
            let (pv, qv) = (&mut pu[u * k..(u + 1) * k], &mut qi[i * k..(i + 1) * k]);
            let dot: f64 = pv.iter().zip(qv.iter()).map(|(a, b)| a * b).sum();
            let err = r.rating as f64 - (mu + bu[u] + bi[i] + dot);
            sq_err += err * err;
            bu[u] += lr * (err - reg * bu[u]);
            bi[i] += lr * (err - reg * bi[i]);
            for f in 0..k {
                let (a, b) = (pv[f], qv[f]);
                pv[f] += lr * (err * b - reg * a);
                qv[f] += lr * (err * a - reg * b);
            }
        }
        if !sq_err.is_finite() {
            return Err(Error::Divergence {
                epoch,
                msg: "matrix factorization loss is not finite".into(),
            });
        }
    }
    let predictions = Dense::from_fn(m, n, |u, i| {
        let dot: f64 = pu[u * k..(u + 1) * k]
            .iter()
            .zip(&qi[i * k..(i + 1) * k])
            .map(|(a, b)| a * b)
            .sum();
        mu + bu[u] + bi[i] + dot
    });
    let train_rmse = if cfg.epochs == 0 {
        let se = compensated_sum(rows.iter().map(|r| {
            (predictions.get(r.user as usize, r.item as usize) - r.rating as f64).powi(2)
        }));
        (se / rows.len() as f64).sqrt()
    } else {
        (sq_err / rows.len() as f64).sqrt()
    };
    Ok(Completion {
        predictions,
        train_rmse,
    })
}

/// Level boundaries `floor(N · cumsum(dist))`, last one pinned to `N`.
pub fn marginal_boundaries(total: usize, dist: &[f64; 5]) -> [usize; 5] {
    let mut out = [0usize; 5];
    let mut acc = 0.0;
    for (k, &p) in dist.iter().enumerate() {
        acc += p;
        // 1e-9 absorbs representation error in the running sum (0.7·10 = 6.999…).
        out[k] = ((total as f64 * acc) + 1e-9).floor().min(total as f64) as usize;
    }
    out[4] = total;
    out
}

/// Replaces real-valued scores by levels 1..=5 so that level counts follow
/// `dist`: ascending order, ties broken by row-major index.
pub fn match_marginals(pred: &Dense<f64>, dist: &[f64; 5]) -> Result<Dense<u8>> {
    let total: f64 = dist.iter().sum();
    if (total - 1.0).abs() > 1e-9 || dist.iter().any(|&p| p < 0.0) {
        return Err(Error::Config(format!(
            "rating marginal {dist:?} must be nonnegative and sum to 1"
        )));
    }
    if pred.as_slice().iter().any(|v| v.is_nan()) {
        return Err(Error::Validation("NaN in completed ratings".into()));
    }
    let mut order: Vec<usize> = (0..pred.len()).collect();
    let values = pred.as_slice();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let bounds = marginal_boundaries(pred.len(), dist);
    let mut out = vec![0u8; pred.len()];
    let mut start = 0;
    for (level, &end) in bounds.iter().enumerate() {
        for &idx in &order[start..end] {
            out[idx] = level as u8 + 1;
        }
        start = end;
    }
    Dense::from_vec(pred.rows(), pred.cols(), out)
}

/// `p · α^min(4, 6 − R)`.
pub fn ratings_to_ctr(ratings: &Dense<u8>, p: f64, alpha: f64) -> Result<Dense<f64>> {
    if !(p > 0.0 && p <= 1.0) || !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!(
            "need p in (0,1] and alpha in (0,1), got p={p} alpha={alpha}"
        )));
    }
    check_levels(ratings)?;
    Ok(ratings.map(|r| p * alpha.powi((6 - r as i32).min(4))))
}

/// Table lookup 1..=5 → 0.1, 0.3, 0.5, 0.7, 0.9.
pub fn ratings_to_cvr(ratings: &Dense<u8>) -> Result<Dense<f64>> {
    check_levels(ratings)?;
    Ok(ratings.map(|r| CVR_LEVELS[r as usize - 1]))
}

fn check_levels(ratings: &Dense<u8>) -> Result<()> {
    match ratings.as_slice().iter().find(|r| !(1..=5).contains(*r)) {
        Some(r) => Err(Error::Validation(format!("rating level {r} outside 1..5"))),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub mf: MfConfig,
    pub rating_marginal: [f64; 5],
    /// CTR scale `p`.
    pub ctr_scale: f64,
    /// CTR decay `α`.
    pub ctr_decay: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            mf: MfConfig::default(),
            rating_marginal: DEFAULT_RATING_MARGINAL,
            ctr_scale: 1.0,
            ctr_decay: 0.5,
        }
    }
}

/// Fully specified click and conversion probabilities over the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub true_ctr: Dense<f64>,
    pub true_cvr: Dense<f64>,
    pub ratings: Dense<u8>,
    pub ctr_scale: f64,
    pub ctr_decay: f64,
    pub rating_marginal: [f64; 5],
}

impl GroundTruth {
    pub fn from_ratings(
        ratings: Dense<u8>,
        ctr_scale: f64,
        ctr_decay: f64,
        rating_marginal: [f64; 5],
    ) -> Result<Self> {
        Ok(Self {
            true_ctr: ratings_to_ctr(&ratings, ctr_scale, ctr_decay)?,
            true_cvr: ratings_to_cvr(&ratings)?,
            ratings,
            ctr_scale,
            ctr_decay,
            rating_marginal,
        })
    }

    /// Completion → marginal matching → CTR / CVR maps. Also returns the
    /// completion's training RMSE for the run log.
    pub fn build(events: &EventTable, cfg: &SynthConfig) -> Result<(Self, f64)> {
        let completion = complete_ratings(events, &cfg.mf)?;
        let ratings = match_marginals(&completion.predictions, &cfg.rating_marginal)?;
        let gt = Self::from_ratings(ratings, cfg.ctr_scale, cfg.ctr_decay, cfg.rating_marginal)?;
        Ok((gt, completion.train_rmse))
    }

    pub fn shape(&self) -> (usize, usize) {
        self.ratings.shape()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.true_ctr.save(&dir.join("true_ctr.f64"))?;
        self.true_cvr.save(&dir.join("true_cvr.f64"))?;
        self.ratings.save(&dir.join("ratings.u8"))?;
        let (m, n) = self.shape();
        let dist = self
            .rating_marginal
            .iter()
            .map(|p| p.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let manifest = format!(
            "kind=ground_truth\nrows={m}\ncols={n}\np={}\nalpha={}\ndist={dist}\nclamp={PROB_CLAMP:e}\n",
            self.ctr_scale, self.ctr_decay
        );
        let path = dir.join("manifest.txt");
        fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let kv = read_manifest(&dir.join("manifest.txt"))?;
        let (m, n) = (manifest_num(&kv, "rows")?, manifest_num(&kv, "cols")?);
        let dist_str = kv
            .get("dist")
            .ok_or_else(|| Error::Config("ground-truth manifest lacks 'dist'".into()))?;
        let parsed: Vec<f64> = dist_str
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Config(format!("bad dist '{dist_str}'")))?;
        let rating_marginal: [f64; 5] = parsed
            .try_into()
            .map_err(|_| Error::Config("dist must have five entries".into()))?;
        Ok(Self {
            true_ctr: Dense::load(&dir.join("true_ctr.f64"), m, n)?,
            true_cvr: Dense::load(&dir.join("true_cvr.f64"), m, n)?,
            ratings: Dense::load(&dir.join("ratings.u8"), m, n)?,
            ctr_scale: manifest_num(&kv, "p")?,
            ctr_decay: manifest_num(&kv, "alpha")?,
            rating_marginal,
        })
    }
}

fn read_manifest(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    crate::experiment::config::parse_key_values(&text)
}

fn manifest_num<T: FromStr>(kv: &BTreeMap<String, String>, key: &str) -> Result<T> {
    kv.get(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Config(format!("manifest lacks a valid '{key}'")))
}

/// One Bernoulli draw of clicks and (fully observed) conversions.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledWorld {
    pub clicks: Dense<u8>,
    pub conversions: Dense<u8>,
    pub seed: u64,
}

impl SampledWorld {
    pub fn num_clicks(&self) -> usize {
        self.clicks.as_slice().iter().filter(|&&o| o == 1).count()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.clicks.save(&dir.join("clicks.u8"))?;
        self.conversions.save(&dir.join("conversions.u8"))?;
        let (m, n) = self.clicks.shape();
        let path = dir.join("manifest.txt");
        fs::write(&path, format!("kind=sampled_world\nrows={m}\ncols={n}\nseed={}\n", self.seed))
            .map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let kv = read_manifest(&dir.join("manifest.txt"))?;
        let (m, n) = (manifest_num(&kv, "rows")?, manifest_num(&kv, "cols")?);
        Ok(Self {
            clicks: Dense::load(&dir.join("clicks.u8"), m, n)?,
            conversions: Dense::load(&dir.join("conversions.u8"), m, n)?,
            seed: manifest_num(&kv, "seed")?,
        })
    }
}

/// `o ~ Bern(p)`, `r ~ Bern(r_true)` per cell, keyed by `(seed, user, item)`.
pub fn sample_world(gt: &GroundTruth, seed: u64) -> SampledWorld {
    let (m, n) = gt.shape();
    let clicks = Dense::from_fn(m, n, |u, i| {
        (cell_uniform(seed, streams::CLICKS, u, i) < gt.true_ctr.get(u, i)) as u8
    });
    let conversions = Dense::from_fn(m, n, |u, i| {
        (cell_uniform(seed, streams::CONVERSIONS, u, i) < gt.true_cvr.get(u, i)) as u8
    });
    SampledWorld {
        clicks,
        conversions,
        seed,
    }
}

pub fn sample_worlds(gt: &GroundTruth, seeds: &[u64]) -> Vec<SampledWorld> {
    seeds.iter().map(|&s| sample_world(gt, s)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PredictedKind {
    One,
    Three,
    Five,
    Skew,
    Crs,
}

impl PredictedKind {
    pub const ALL: [PredictedKind; 5] = [Self::One, Self::Three, Self::Five, Self::Skew, Self::Crs];

    /// Source level whose cells get flipped to 0.9, for the flip settings.
    fn flip_source_level(self) -> Option<u8> {
        match self {
            Self::One => Some(1),
            Self::Three => Some(2),
            Self::Five => Some(3),
            Self::Skew | Self::Crs => None,
        }
    }
}

impl fmt::Display for PredictedKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::One => "ONE",
            Self::Three => "THREE",
            Self::Five => "FIVE",
            Self::Skew => "SKEW",
            Self::Crs => "CRS",
        })
    }
}

impl FromStr for PredictedKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "ONE" => Ok(Self::One),
            "THREE" => Ok(Self::Three),
            "FIVE" => Ok(Self::Five),
            "SKEW" => Ok(Self::Skew),
            "CRS" => Ok(Self::Crs),
            _ => Err(Error::Config(format!("unknown predicted-matrix setting '{s}'"))),
        }
    }
}

/// Adversarial predicted-CVR matrix `R̂` for the estimator comparison.
pub fn make_predicted_matrix(kind: PredictedKind, gt: &GroundTruth, seed: u64) -> Result<Dense<f64>> {
    let (m, n) = gt.shape();
    match kind {
        PredictedKind::One | PredictedKind::Three | PredictedKind::Five => {
            let source = kind.flip_source_level().expect("flip setting");
            let mut out = gt.true_cvr.clone();
            let required = gt.ratings.as_slice().iter().filter(|&&r| r == 5).count();
            let candidates: Vec<usize> = gt
                .ratings
                .as_slice()
                .iter()
                .enumerate()
                .filter(|(_, &r)| r == source)
                .map(|(k, _)| k)
                .collect();
            if candidates.len() < required {
                return Err(Error::Generation(format!(
                    "{kind}: {} cells at level {source} but {required} flips required",
                    candidates.len()
                )));
            }
            let mut rng = stream_rng(seed, streams::FLIPS);
            for pick in index::sample(&mut rng, candidates.len(), required) {
                out.as_mut_slice()[candidates[pick]] = CVR_LEVELS[4];
            }
            Ok(out)
        }
        PredictedKind::Skew => {
            let mut rng = stream_rng(seed, streams::SKEW);
            let mut out = Dense::filled(m, n, 0.0);
            for (k, &mean) in gt.true_cvr.as_slice().iter().enumerate() {
                let draw = Normal::new(mean, (1.0 - mean) / 2.0)
                    .map_err(|e| Error::Generation(e.to_string()))?
                    .sample(&mut rng);
                out.as_mut_slice()[k] = draw.clamp(0.1, 0.9);
            }
            Ok(out)
        }
        PredictedKind::Crs => Ok(gt.ratings.map(|r| if r <= 4 { 0.1 } else { 0.5 })),
    }
}

/// Noisy propensities `1/p̂ = (1−β)/p + β/p_e`, `p_e` the world's click rate.
pub fn noisy_propensity(gt: &GroundTruth, world: &SampledWorld, beta: f64) -> Result<Dense<f64>> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Config(format!("beta {beta} not in [0, 1]")));
    }
    let clicks = world.clicks.as_slice().iter().filter(|&&o| o == 1).count();
    if clicks == 0 {
        return Err(Error::DegenerateWorld("no clicks, p_e = 0".into()));
    }
    let p_e = clicks as f64 / world.clicks.len() as f64;
    Ok(noisy_propensity_with_rate(&gt.true_ctr, p_e, beta))
}

pub(crate) fn noisy_propensity_with_rate(ctr: &Dense<f64>, p_e: f64, beta: f64) -> Dense<f64> {
    if beta == 0.0 {
        return ctr.clone();
    }
    ctr.map(|p| 1.0 / ((1.0 - beta) / p + beta / p_e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ImputationKind {
    /// Pseudo rate weighted by `1/p̂`, shared by EIB and DR.
    EibDr,
    /// Pseudo rate weighted by `(1−p̂)/p̂²`.
    Mrdr,
}

/// Variants of the global pseudo conversion rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct HeuristicOptions {
    /// MRDR only: divide by `Σ (1−p̂)/p̂²` instead of `Σ 1/p̂`.
    pub symmetric_mrdr_denominator: bool,
    /// Restrict both sums to clicked cells instead of the whole grid.
    pub clicked_only: bool,
}

/// The global pseudo conversion rate `q` of the heuristic imputation.
pub fn heuristic_pseudo_rate(
    kind: ImputationKind,
    world: &SampledWorld,
    propensity: &Dense<f64>,
    opts: HeuristicOptions,
) -> Result<f64> {
    world.clicks.check_same_shape(propensity)?;
    let cells = || {
        world
            .clicks
            .as_slice()
            .iter()
            .zip(world.conversions.as_slice())
            .zip(propensity.as_slice())
            .filter(move |((&o, _), _)| !opts.clicked_only || o == 1)
            .map(|((_, &r), &p)| (r as f64, p))
    };
    let (num, den) = match kind {
        ImputationKind::EibDr => (
            compensated_sum(cells().map(|(r, p)| r / p)),
            compensated_sum(cells().map(|(_, p)| 1.0 / p)),
        ),
        ImputationKind::Mrdr => {
            let w = |p: f64| (1.0 - p) / (p * p);
            let num = compensated_sum(cells().map(|(r, p)| w(p) * r));
            let den = if opts.symmetric_mrdr_denominator {
                compensated_sum(cells().map(|(_, p)| w(p)))
            } else {
                compensated_sum(cells().map(|(_, p)| 1.0 / p))
            };
            (num, den)
        }
    };
    if den == 0.0 || !den.is_finite() {
        return Err(Error::Generation(format!(
            "pseudo-rate denominator is {den} for {kind:?}"
        )));
    }
    Ok(num / den)
}

/// `ê = CE(q, r̂)` cellwise with the kind's global pseudo rate `q`.
pub fn heuristic_imputed_errors(
    kind: ImputationKind,
    world: &SampledWorld,
    propensity: &Dense<f64>,
    predicted: &Dense<f64>,
    opts: HeuristicOptions,
) -> Result<Dense<f64>> {
    predicted.check_same_shape(propensity)?;
    let q = heuristic_pseudo_rate(kind, world, propensity, opts)?;
    Ok(predicted.map(|r| cross_entropy(q, r)))
}

/// Biased click log plus an unbiased per-user panel drawn from one world:
/// clicked cells with their conversions form the MNAR set; `panel_size`
/// uniformly chosen items per user form the MAR set.
pub fn mnar_mar_benchmark(
    world: &SampledWorld,
    panel_size: usize,
    seed: u64,
) -> Result<(ConversionDataset, ConversionDataset)> {
    let (m, n) = world.clicks.shape();
    if panel_size == 0 || panel_size > n {
        return Err(Error::Config(format!("panel size {panel_size} not in 1..={n}")));
    }
    let mnar: Vec<Interaction> = world
        .clicks
        .indexed()
        .filter(|&(_, _, o)| o == 1)
        .map(|(u, i, _)| Interaction {
            user: u as u32,
            item: i as u32,
            converted: world.conversions.get(u, i) == 1,
        })
        .collect();
    let mut rng = stream_rng(seed, streams::MAR_PANEL);
    let mut mar = Vec::with_capacity(m * panel_size);
    for u in 0..m {
        for i in index::sample(&mut rng, n, panel_size) {
            mar.push(Interaction {
                user: u as u32,
                item: i as u32,
                converted: world.conversions.get(u, i) == 1,
            });
        }
    }
    Ok((
        ConversionDataset::new(mnar, m, n)?,
        ConversionDataset::new(mar, m, n)?,
    ))
}
