use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::early_stop::{Direction, EarlyStopping};
use super::losses::{imputation_batch_loss, prediction_batch_loss, Cell, ClickedCell, PseudoLabeler};
use super::sampler::{sample_unclicked, SampleRatio};
use super::{DoubleSpec, Method, Steps, TrainConfig};
use crate::datasets::ConversionDataset;
use crate::error::{Error, Result};
use crate::estimators::fmt_f64;
use crate::models::{fm_gradients, Adam, AdamConfig, Example, FmParams};
use crate::numeric::{cross_entropy, KahanSum};
use crate::propensity::PropensityScore;
use crate::rng::{stream_rng, streams};

/// Prediction model φ and imputation model θ of identical shape.
#[derive(Debug, Clone)]
pub struct DoubleLearner {
    pub phi: FmParams,
    pub theta: FmParams,
    phi_opt: Adam,
    theta_opt: Adam,
}

impl DoubleLearner {
    pub fn new(phi: FmParams, theta: FmParams, adam: AdamConfig) -> Result<Self> {
        if !phi.same_shape(&theta) {
            return Err(Error::Shape("prediction and imputation models differ in shape".into()));
        }
        Ok(Self {
            phi_opt: Adam::new(adam, phi.len()),
            theta_opt: Adam::new(adam, theta.len()),
            phi,
            theta,
        })
    }

    /// `θ := φ` by value; θ's optimizer state restarts.
    pub fn sync_imputation(&mut self) {
        self.theta.clone_from(&self.phi);
        self.theta_opt.reset();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_metric: f64,
    pub wall_ms: Option<u128>,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    /// φ at the best validation epoch.
    pub params: FmParams,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_valid: f64,
    /// `|D| / |O|` when the sample ratio is All.
    pub effective_ratio: Option<f64>,
}

/// Epoch log CSV: `epoch,train_loss,valid_metric,wall_ms`.
pub fn write_epoch_log<W: Write>(mut out: W, header: &str, log: &[EpochLog]) -> Result<()> {
    out.write_all(header.as_bytes())
        .map_err(|e| Error::io("<epoch log>", e))?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "train_loss", "valid_metric", "wall_ms"])?;
    for r in log {
        w.write_record([
            r.epoch.to_string(),
            fmt_f64(r.train_loss),
            fmt_f64(r.valid_metric),
            r.wall_ms.map(|t| t.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<epoch log>", e))?;
    Ok(())
}

/// Cells scored by the validation estimator.
struct Validation {
    clicked: Vec<ClickedCell>,
    /// Probability that a clicked event landed in the validation split.
    valid_share: f64,
    /// Cells standing in for the grid in `Σ_D ê`.
    grid_sample: Vec<(usize, usize)>,
    universe: f64,
}

impl Validation {
    fn new(
        train: &ConversionDataset,
        valid: &ConversionDataset,
        prop: &dyn PropensityScore,
        cfg: &TrainConfig,
    ) -> Self {
        let clicked = to_clicked(valid, prop);
        let total = train.num_clicks() + valid.num_clicks();
        let valid_share = if total == 0 { 1.0 } else { valid.num_clicks() as f64 / total as f64 };
        let (m, n) = (train.num_users(), train.num_items());
        let grid_sample = if cfg.method.double_spec().is_none() {
            Vec::new()
        } else if m * n <= cfg.valid_cell_cap {
            (0..m).flat_map(|u| (0..n).map(move |i| (u, i))).collect()
        } else {
            let mut rng = stream_rng(cfg.seed, streams::VALID_CELLS);
            (0..cfg.valid_cell_cap)
                .map(|_| (rng.random_range(0..m), rng.random_range(0..n)))
                .collect()
        };
        Self {
            clicked,
            valid_share,
            grid_sample,
            universe: (m * n) as f64,
        }
    }

    /// The method's own loss estimate on the validation split (lower is better).
    fn metric(&self, method: Method, phi: &FmParams, pseudo: Option<&PseudoLabeler>) -> f64 {
        if self.clicked.is_empty() {
            return f64::NAN;
        }
        let e = |c: &ClickedCell| cross_entropy(c.label, phi.predict_unchecked(c.user, c.item));
        let n = self.clicked.len() as f64;
        match (method, pseudo) {
            (Method::Naive, _) => self.clicked.iter().map(e).collect::<KahanSum>().value() / n,
            (Method::Ips, _) => {
                self.clicked.iter().map(|c| e(c) / c.propensity).collect::<KahanSum>().value() / n
            }
            (_, Some(pseudo)) => {
                let e_hat = |u: usize, i: usize| cross_entropy(pseudo.label(u, i), phi.predict_unchecked(u, i));
                let grid: KahanSum = self.grid_sample.iter().map(|&(u, i)| e_hat(u, i)).collect();
                let grid_mean = grid.value() / self.grid_sample.len() as f64;
                let corr: KahanSum = self
                    .clicked
                    .iter()
                    .map(|c| (e(c) - e_hat(c.user, c.item)) / (c.propensity * self.valid_share))
                    .collect();
                grid_mean + corr.value() / self.universe
            }
            (_, None) => f64::NAN,
        }
    }
}

fn to_clicked(ds: &ConversionDataset, prop: &dyn PropensityScore) -> Vec<ClickedCell> {
    ds.events()
        .iter()
        .map(|e| {
            let (u, i) = (e.user as usize, e.item as usize);
            ClickedCell {
                user: u,
                item: i,
                label: if e.converted { 1.0 } else { 0.0 },
                propensity: prop.propensity(u, i),
            }
        })
        .collect()
}

/// Indices of the batches one phase visits, reshuffling when a fixed step
/// count outruns a pass.
fn phase_batches(n: usize, batch: usize, steps: Steps, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let per_pass = n.div_ceil(batch);
    let wanted = match steps {
        Steps::FullPass => per_pass,
        Steps::Count(k) => k,
    };
    let mut out = Vec::with_capacity(wanted);
    let mut start = 0;
    while out.len() < wanted && n > 0 {
        if start >= n {
            order.shuffle(rng);
            start = 0;
        }
        let end = (start + batch).min(n);
        out.push(order[start..end].to_vec());
        start = end;
    }
    out
}

fn check_finite(loss: f64, epoch: usize, what: &str) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence {
            epoch,
            msg: format!("{what} loss is not finite"),
        })
    }
}

/// Trains `cfg.method` on `train` with early stopping on `valid`.
///
/// Per epoch the double-learning methods run: optional sync `θ := φ`, an
/// imputation phase over clicked batches, a frozen pseudo-label snapshot,
/// and a prediction phase over clicked batches padded with sampled
/// unclicked cells (or a pass over the whole grid for ratio All).
pub fn run_method(
    train: &ConversionDataset,
    valid: &ConversionDataset,
    prop: &dyn PropensityScore,
    cfg: &TrainConfig,
) -> Result<TrainOutput> {
    cfg.validate()?;
    if train.num_clicks() == 0 {
        return Err(Error::Training("training split has no clicks".into()));
    }
    let (m, n) = (train.num_users(), train.num_items());
    if (valid.num_users(), valid.num_items()) != (m, n) {
        return Err(Error::Shape("train and validation grids differ".into()));
    }
    let clicked = to_clicked(train, prop);
    let validation = Validation::new(train, valid, prop, cfg);
    let adam = AdamConfig {
        learning_rate: cfg.learning_rate,
        ..AdamConfig::default()
    };
    let phi = FmParams::init(m, n, cfg.dim, cfg.seed, streams::FM_INIT)?;
    let spec = cfg.method.double_spec();
    let theta = match spec {
        Some(DoubleSpec { sync: true, .. }) | None => phi.clone(),
        Some(DoubleSpec { sync: false, .. }) => FmParams::init(m, n, cfg.dim, cfg.seed, streams::IMPUTATION_INIT)?,
    };
    let mut learner = DoubleLearner::new(phi, theta, adam)?;
    let mut order_rng = stream_rng(cfg.seed, streams::CLICKED_SHUFFLE);
    let mut cell_rng = stream_rng(cfg.seed, streams::UNCLICKED_SAMPLING);

    let effective_ratio = match cfg.sample_ratio {
        SampleRatio::All if spec.is_some() => {
            let r = (m * n) as f64 / train.num_clicks() as f64;
            log::info!("{}: sample ratio All, effective ratio |D|/|O| = {r:.2}", cfg.method);
            Some(r)
        }
        _ => None,
    };

    let mut stopper = EarlyStopping::new(cfg.early_stop_patience, Direction::Minimize)?;
    let mut best = learner.phi.clone();
    let mut best_valid = f64::NAN;
    let mut log = Vec::new();
    let grid_storage: Vec<u32>;
    let grid_cells: Option<&[u32]> = if matches!(cfg.sample_ratio, SampleRatio::All) && spec.is_some() {
        grid_storage = (0..(m * n) as u32).collect();
        Some(&grid_storage)
    } else {
        None
    };

    for epoch in 1..=cfg.max_epochs {
        let start = cfg.record_wall_time.then(Instant::now);
        let mut loss_sum = KahanSum::new();
        let mut loss_cells = 0usize;
        let pseudo = match spec {
            None => {
                for idx in phase_batches(clicked.len(), cfg.batch_size, cfg.prediction_steps, &mut order_rng) {
                    let scale = 1.0 / idx.len() as f64;
                    let batch: Vec<Example> = idx
                        .iter()
                        .map(|&k| {
                            let c = clicked[k];
                            let w = if cfg.method == Method::Ips { 1.0 / c.propensity } else { 1.0 };
                            Example { user: c.user, item: c.item, weight: scale * w, label: c.label }
                        })
                        .collect();
                    let (loss, grad) = fm_gradients(&learner.phi, &batch, cfg.l2_prediction)?;
                    check_finite(loss, epoch, "prediction")?;
                    loss_sum.add(loss * idx.len() as f64);
                    loss_cells += idx.len();
                    learner.phi_opt.update(learner.phi.as_mut_slice(), &grad)?;
                }
                None
            }
            Some(spec) => {
                if spec.sync {
                    learner.sync_imputation();
                }
                for idx in phase_batches(clicked.len(), cfg.batch_size, cfg.imputation_steps, &mut order_rng) {
                    let batch: Vec<ClickedCell> = idx.iter().map(|&k| clicked[k]).collect();
                    let (loss, grad) = imputation_batch_loss(
                        &learner.theta,
                        &learner.phi,
                        &batch,
                        spec.weight,
                        spec.objective,
                        cfg.l2_imputation,
                        1.0 / batch.len() as f64,
                    )?;
                    check_finite(loss, epoch, "imputation")?;
                    learner.theta_opt.update(learner.theta.as_mut_slice(), &grad)?;
                }
                let pseudo = PseudoLabeler::new(&learner.theta, cfg.binarize_pseudo_labels);
                let batches: Vec<Vec<Cell>> = match (grid_cells, cfg.sample_ratio) {
                    (Some(cells), _) => phase_batches(cells.len(), cfg.batch_size, cfg.prediction_steps, &mut order_rng)
                        .into_iter()
                        .map(|idx| {
                            idx.iter()
                                .map(|&k| {
                                    let (u, i) = ((cells[k] as usize) / n, (cells[k] as usize) % n);
                                    match train.label(u, i) {
                                        Some(r) => Cell {
                                            user: u,
                                            item: i,
                                            clicked: true,
                                            label: if r { 1.0 } else { 0.0 },
                                            propensity: prop.propensity(u, i),
                                        },
                                        None => Cell { user: u, item: i, clicked: false, label: 0.0, propensity: 1.0 },
                                    }
                                })
                                .collect()
                        })
                        .collect(),
                    (None, ratio) => {
                        let r = match ratio {
                            SampleRatio::Ratio(r) => r,
                            SampleRatio::All => 0,
                        };
                        let idxs = phase_batches(clicked.len(), cfg.batch_size, cfg.prediction_steps, &mut order_rng);
                        let mut out = Vec::with_capacity(idxs.len());
                        for idx in idxs {
                            let mut cells: Vec<Cell> = idx.iter().map(|&k| clicked[k].into()).collect();
                            for (u, i) in sample_unclicked(train, r * idx.len(), &mut cell_rng)? {
                                cells.push(Cell {
                                    user: u as usize,
                                    item: i as usize,
                                    clicked: false,
                                    label: 0.0,
                                    propensity: 1.0,
                                });
                            }
                            out.push(cells);
                        }
                        out
                    }
                };
                for batch in batches {
                    let (loss, grad) =
                        prediction_batch_loss(&learner.phi, &batch, &pseudo, cfg.l2_prediction, 1.0 / batch.len() as f64)?;
                    check_finite(loss, epoch, "prediction")?;
                    loss_sum.add(loss * batch.len() as f64);
                    loss_cells += batch.len();
                    learner.phi_opt.update(learner.phi.as_mut_slice(), &grad)?;
                }
                Some(pseudo)
            }
        };
        if !learner.phi.is_finite() {
            return Err(Error::Divergence {
                epoch,
                msg: format!("non-finite parameters; best epoch so far {}", stopper.best_epoch()),
            });
        }
        let metric = validation.metric(cfg.method, &learner.phi, pseudo.as_ref());
        let decision = stopper.observe(metric);
        if decision.improved {
            best.clone_from(&learner.phi);
            best_valid = metric;
        }
        let train_loss = if loss_cells == 0 { f64::NAN } else { loss_sum.value() / loss_cells as f64 };
        log::debug!("{} epoch {epoch}: train {train_loss:.6} valid {metric:.6}", cfg.method);
        log.push(EpochLog {
            epoch,
            train_loss,
            valid_metric: metric,
            wall_ms: start.map(|t| t.elapsed().as_millis()),
        });
        if decision.stop {
            break;
        }
    }
    Ok(TrainOutput {
        params: best,
        log,
        best_epoch: stopper.best_epoch(),
        best_valid,
        effective_ratio,
    })
}
