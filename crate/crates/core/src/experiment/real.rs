//! Real-data protocols: tune on the first seed, train every seed with the
//! selected configuration, score on the MAR test set.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::config::{parse_list, parse_seed_list, Config};
use super::{csv_header, parallel_map, workers, OutputDir};
use crate::datasets::{prepare, DatasetManifest, PreparedData};
use crate::error::{Error, Result};
use crate::estimators::fmt_f64;
use crate::metrics::{evaluate, write_metric_csv, MetricRecord, MetricRow};
use crate::models::Checkpoint;
use crate::numeric::mean_std;
use crate::propensity::{train_ctr, CtrConfig, PropensityModel};
use crate::training::{run_method, write_epoch_log, Method, SampleRatio, Steps, TrainConfig, TrainOutput};

pub const DEFAULT_KS: [usize; 3] = [2, 4, 6];
pub const SWEEP_RATIOS: [SampleRatio; 6] = [
    SampleRatio::Ratio(0),
    SampleRatio::Ratio(2),
    SampleRatio::Ratio(4),
    SampleRatio::Ratio(6),
    SampleRatio::Ratio(8),
    SampleRatio::All,
];
pub const ABLATION_METHODS: [Method; 4] = [Method::MrdrDl, Method::DrDl, Method::MrdrJl, Method::MrdrDlSl];

/// Which runs keep their trained parameters on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointPolicy {
    None,
    First,
    All,
}

impl std::str::FromStr for CheckpointPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "first" => Ok(Self::First),
            "all" => Ok(Self::All),
            _ => Err(Error::Config(format!("checkpoints must be none, first or all, got '{s}'"))),
        }
    }
}

impl std::fmt::Display for CheckpointPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::First => "first",
            Self::All => "all",
        })
    }
}

/// Reads the `train.*` keys, writing defaults back.
pub fn train_config(cfg: &mut Config) -> Result<TrainConfig> {
    let d = TrainConfig::default();
    let out = TrainConfig {
        method: d.method,
        learning_rate: cfg.get_or("train.lr", d.learning_rate)?,
        batch_size: cfg.get_or("train.batch_size", d.batch_size)?,
        dim: cfg.get_or("train.dim", d.dim)?,
        l2_imputation: cfg.get_or("train.l2_imputation", d.l2_imputation)?,
        l2_prediction: cfg.get_or("train.l2_prediction", d.l2_prediction)?,
        sample_ratio: cfg.get_or("train.ratio", d.sample_ratio)?,
        imputation_steps: cfg.get_or::<Steps>("train.imputation_steps", d.imputation_steps)?,
        prediction_steps: cfg.get_or::<Steps>("train.prediction_steps", d.prediction_steps)?,
        max_epochs: cfg.get_or("train.max_epochs", d.max_epochs)?,
        early_stop_patience: cfg.get_or("train.patience", d.early_stop_patience)?,
        binarize_pseudo_labels: cfg.get_or("train.binarize", d.binarize_pseudo_labels)?,
        valid_cell_cap: cfg.get_or("train.valid_cell_cap", d.valid_cell_cap)?,
        record_wall_time: cfg.get_or("train.record_wall_time", d.record_wall_time)?,
        seed: d.seed,
    };
    out.validate()?;
    Ok(out)
}

pub fn ctr_config(cfg: &mut Config) -> Result<CtrConfig> {
    let d = CtrConfig::default();
    Ok(CtrConfig {
        dim: cfg.get_or("ctr.dim", d.dim)?,
        learning_rate: cfg.get_or("ctr.lr", d.learning_rate)?,
        batch_size: cfg.get_or("ctr.batch_size", d.batch_size)?,
        l2: cfg.get_or("ctr.l2", d.l2)?,
        negative_ratio: cfg.get_or("ctr.negative_ratio", d.negative_ratio)?,
        max_epochs: cfg.get_or("ctr.max_epochs", d.max_epochs)?,
        patience: cfg.get_or("ctr.patience", d.patience)?,
        holdout_fraction: cfg.get_or("ctr.holdout", d.holdout_fraction)?,
        clamp_floor: cfg.get_or("ctr.floor", d.clamp_floor)?,
        calibrate: cfg.get_or("ctr.calibrate", d.calibrate)?,
        seed: d.seed,
    })
}

/// One point of the hyperparameter grid: `train.*` assignments.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub assignments: Vec<(String, String)>,
    pub config: TrainConfig,
}

impl GridPoint {
    pub fn label(&self) -> String {
        if self.assignments.is_empty() {
            return "default".into();
        }
        self.assignments
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(";")
    }
}

/// Cartesian product of the `grid.train.*` keys over the base config.
pub fn expand_grid(cfg: &Config) -> Result<Vec<GridPoint>> {
    let axes: Vec<(String, Vec<String>)> = cfg
        .iter()
        .filter_map(|(k, v)| k.strip_prefix("grid.").map(|rest| (rest.to_string(), v.to_string())))
        .map(|(k, v)| {
            if !k.starts_with("train.") {
                return Err(Error::Config(format!("grid key 'grid.{k}' must name a train.* setting")));
            }
            let vals: Vec<String> =
                parse_list(&v).map_err(|_| Error::Config(format!("bad grid values for {k}: '{v}'")))?;
            Ok((k, vals))
        })
        .collect::<Result<_>>()?;
    let mut combos: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for (key, vals) in &axes {
        combos = combos
            .into_iter()
            .flat_map(|c| {
                vals.iter().map(move |v| {
                    let mut c = c.clone();
                    c.push((key.clone(), v.clone()));
                    c
                })
            })
            .collect();
    }
    combos
        .into_iter()
        .map(|assignments| {
            let mut local = cfg.clone();
            for (k, v) in &assignments {
                local.set(k, v);
            }
            Ok(GridPoint {
                config: train_config(&mut local)?,
                assignments,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct RealSettings {
    pub manifest_path: PathBuf,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub ks: Vec<usize>,
    pub base: TrainConfig,
    pub ctr: CtrConfig,
    pub grid: Vec<GridPoint>,
    pub checkpoints: CheckpointPolicy,
    pub workers: usize,
}

/// Repeat count used when no seed list is given.
fn default_repeats(dataset_name: &str) -> u64 {
    let name = dataset_name.to_ascii_lowercase();
    if name.contains("coat") {
        100
    } else {
        20
    }
}

impl RealSettings {
    pub fn from_config(cfg: &mut Config, seeds_override: Option<Vec<u64>>, default_methods: &[Method]) -> Result<(Self, PreparedData)> {
        let manifest_path: PathBuf = cfg.require::<String>("dataset")?.into();
        if !manifest_path.exists() {
            return Err(Error::MissingDataset {
                path: manifest_path,
                hint: "write a dataset manifest (name, format, train, test) next to the downloaded files".into(),
            });
        }
        let manifest = DatasetManifest::load(&manifest_path)?;
        let data = prepare(&manifest)?;
        let methods = cfg.get_list("methods", default_methods)?;
        if methods.is_empty() {
            return Err(Error::Config("no methods selected".into()));
        }
        let seeds = match seeds_override {
            Some(s) if s.is_empty() => return Err(Error::Config("seed list is empty".into())),
            Some(s) => {
                cfg.set("seeds", s.iter().map(u64::to_string).collect::<Vec<_>>().join(","));
                s
            }
            None => {
                let default = format!("0..{}", default_repeats(&manifest.name));
                parse_seed_list(&cfg.get_or("seeds", default)?)?
            }
        };
        let ks = cfg.get_list("ks", &DEFAULT_KS)?;
        let base = train_config(cfg)?;
        let ctr = ctr_config(cfg)?;
        let grid = expand_grid(cfg)?;
        let settings = Self {
            manifest_path,
            methods,
            seeds,
            ks,
            base,
            ctr,
            grid,
            checkpoints: cfg.get_or("checkpoints", CheckpointPolicy::First)?,
            workers: workers(cfg)?,
        };
        Ok((settings, data))
    }
}

/// Outcome of one (method, configuration, seed) training run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub method: Method,
    pub seed: u64,
    pub output: std::result::Result<TrainOutput, (String, String)>,
    pub metrics: Vec<MetricRow>,
}

fn failure(e: &Error) -> (String, String) {
    (e.kind().to_string(), e.to_string())
}

/// Divergence is recoverable; every other error aborts the command.
fn train_one(
    data: &PreparedData,
    prop: &PropensityModel,
    cfg: &TrainConfig,
    ks: &[usize],
) -> Result<(std::result::Result<TrainOutput, (String, String)>, Vec<MetricRow>)> {
    match run_method(&data.train, &data.valid, prop, cfg) {
        Ok(out) => {
            let table = evaluate(&out.params, &data.test, ks)?;
            Ok((Ok(out), table.rows))
        }
        Err(e @ Error::Divergence { .. }) => {
            log::warn!("{} seed {} diverged: {e}", cfg.method, cfg.seed);
            Ok((Err(failure(&e)), Vec::new()))
        }
        Err(e) => Err(e),
    }
}

fn fit_propensity(data: &PreparedData, base: &CtrConfig, seed: u64) -> Result<PropensityModel> {
    let cfg = CtrConfig { seed, ..base.clone() };
    let model = train_ctr(&data.train, &cfg)?;
    log::info!(
        "seed {seed}: CTR model mean propensity {:.5} (train click rate {:.5})",
        model.mean_propensity(),
        data.train.click_rate()
    );
    Ok(model)
}

#[derive(Debug, Clone)]
pub struct TuningRow {
    pub method: Method,
    pub point: String,
    pub best_valid: Option<f64>,
    pub best_epoch: Option<usize>,
    pub selected: bool,
}

/// Picks, per method, the grid point with the lowest validation estimate on
/// the tuning seed. Falls back to the first point if every run diverged.
fn tune(
    data: &PreparedData,
    prop: &PropensityModel,
    settings: &RealSettings,
    methods: &[Method],
    tune_seed: u64,
) -> Result<(BTreeMap<Method, TrainConfig>, Vec<TuningRow>)> {
    let jobs: Vec<(Method, usize)> = methods
        .iter()
        .flat_map(|&m| (0..settings.grid.len()).map(move |g| (m, g)))
        .collect();
    let mut chosen = BTreeMap::new();
    let mut rows = Vec::new();
    if settings.grid.len() == 1 {
        for &m in methods {
            chosen.insert(m, TrainConfig { method: m, ..settings.grid[0].config.clone() });
            rows.push(TuningRow {
                method: m,
                point: settings.grid[0].label(),
                best_valid: None,
                best_epoch: None,
                selected: true,
            });
        }
        return Ok((chosen, rows));
    }
    let results = parallel_map(&jobs, settings.workers, |&(m, g)| {
        let cfg = TrainConfig { method: m, seed: tune_seed, ..settings.grid[g].config.clone() };
        run_method(&data.train, &data.valid, prop, &cfg)
    });
    for &m in methods {
        let mut best: Option<(usize, f64)> = None;
        let first_row = rows.len();
        for (&(jm, g), res) in jobs.iter().zip(&results) {
            if jm != m {
                continue;
            }
            let (valid, epoch) = match res {
                Ok(out) => (Some(out.best_valid), Some(out.best_epoch)),
                Err(Error::Divergence { .. }) => (None, None),
                Err(e) => return Err(Error::Training(format!("tuning {m}: {e}"))),
            };
            if let Some(v) = valid.filter(|v| v.is_finite()) {
                if best.is_none_or(|(_, b)| v < b) {
                    best = Some((g, v));
                }
            }
            rows.push(TuningRow {
                method: m,
                point: settings.grid[g].label(),
                best_valid: valid,
                best_epoch: epoch,
                selected: false,
            });
        }
        let g = best.map_or(0, |(g, _)| g);
        rows[first_row + g].selected = true;
        log::info!("{m}: selected {}", settings.grid[g].label());
        chosen.insert(m, TrainConfig { method: m, ..settings.grid[g].config.clone() });
    }
    Ok((chosen, rows))
}

/// Trains every (method, seed) with the tuned configurations. One CTR model
/// per seed is shared by all methods.
fn run_seeds(
    data: &PreparedData,
    settings: &RealSettings,
    configs: &BTreeMap<Method, TrainConfig>,
    tune_prop: &PropensityModel,
) -> Result<Vec<RunResult>> {
    let tune_seed = settings.seeds[0];
    let per_seed = parallel_map(&settings.seeds, settings.workers, |&seed| -> Result<Vec<RunResult>> {
        let own;
        let prop = if seed == tune_seed {
            tune_prop
        } else {
            own = fit_propensity(data, &settings.ctr, seed)?;
            &own
        };
        let mut out = Vec::new();
        for (&method, cfg) in configs {
            let cfg = TrainConfig { seed, ..cfg.clone() };
            let (output, metrics) = train_one(data, prop, &cfg, &settings.ks)?;
            out.push(RunResult { method, seed, output, metrics });
        }
        Ok(out)
    });
    let mut all = Vec::new();
    for r in per_seed {
        all.extend(r?);
    }
    all.sort_by_key(|r| (r.method, r.seed));
    Ok(all)
}

/// Mean and sample std of one metric column per (method, K).
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: Method,
    pub k: usize,
    pub dcg: (f64, f64),
    pub recall_normalized: (f64, f64),
    pub recall_hitcount: (f64, f64),
    pub n_seeds: usize,
    pub n_failed: usize,
}

pub fn summarize(results: &[RunResult], methods: &[Method], ks: &[usize]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for &method in methods {
        let runs: Vec<&RunResult> = results.iter().filter(|r| r.method == method).collect();
        let ok: Vec<&RunResult> = runs.iter().copied().filter(|r| r.output.is_ok()).collect();
        for &k in ks {
            let col = |f: fn(&MetricRow) -> f64| {
                let v: Vec<f64> = ok
                    .iter()
                    .filter_map(|r| r.metrics.iter().find(|m| m.k == k).map(f))
                    .collect();
                if v.is_empty() {
                    (f64::NAN, f64::NAN)
                } else {
                    mean_std(&v)
                }
            };
            rows.push(SummaryRow {
                method,
                k,
                dcg: col(|m| m.dcg),
                recall_normalized: col(|m| m.recall_normalized),
                recall_hitcount: col(|m| m.recall_hitcount),
                n_seeds: ok.len(),
                n_failed: runs.len() - ok.len(),
            });
        }
    }
    rows
}

const SUMMARY_COLUMNS: [&str; 9] = [
    "K",
    "dcg_mean",
    "dcg_std",
    "recall_normalized_mean",
    "recall_normalized_std",
    "recall_hitcount_mean",
    "recall_hitcount_std",
    "n_seeds",
    "n_failed",
];

fn summary_fields(r: &SummaryRow) -> Vec<String> {
    vec![
        r.k.to_string(),
        fmt_f64(r.dcg.0),
        fmt_f64(r.dcg.1),
        fmt_f64(r.recall_normalized.0),
        fmt_f64(r.recall_normalized.1),
        fmt_f64(r.recall_hitcount.0),
        fmt_f64(r.recall_hitcount.1),
        r.n_seeds.to_string(),
        r.n_failed.to_string(),
    ]
}

fn csv_bytes(header: &str, columns: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut buf = header.as_bytes().to_vec();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(columns)?;
        for r in rows {
            w.write_record(&r)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
    }
    Ok(buf)
}

fn write_summary(out: &OutputDir, rel: &str, header: &str, dataset: &str, rows: &[SummaryRow]) -> Result<()> {
    let mut cols = vec!["method", "dataset"];
    cols.extend(SUMMARY_COLUMNS);
    let bytes = csv_bytes(
        header,
        &cols,
        rows.iter().map(|r| {
            let mut f = vec![r.method.to_string(), dataset.to_string()];
            f.extend(summary_fields(r));
            f
        }),
    )?;
    out.write(rel, &bytes)?;
    Ok(())
}

fn write_run_artifacts(
    out: &OutputDir,
    prefix: &str,
    header: &str,
    dataset: &str,
    results: &[RunResult],
    tuning: &[TuningRow],
    policy: CheckpointPolicy,
) -> Result<()> {
    let records: Vec<MetricRecord> = results
        .iter()
        .flat_map(|r| {
            r.metrics.iter().map(move |row| MetricRecord {
                method: r.method.to_string(),
                dataset: dataset.to_string(),
                seed: r.seed,
                row: *row,
            })
        })
        .collect();
    let mut buf = Vec::new();
    write_metric_csv(&mut buf, header, &records)?;
    out.write(&format!("{prefix}metrics.csv"), &buf)?;

    let tuning_rows = tuning.iter().map(|t| {
        vec![
            t.method.to_string(),
            t.point.clone(),
            t.best_valid.map(fmt_f64).unwrap_or_default(),
            t.best_epoch.map(|e| e.to_string()).unwrap_or_default(),
            t.selected.to_string(),
        ]
    });
    let bytes = csv_bytes(header, &["method", "config", "best_valid", "best_epoch", "selected"], tuning_rows)?;
    out.write(&format!("{prefix}tuning.csv"), &bytes)?;

    let failures = results.iter().filter_map(|r| {
        r.output
            .as_ref()
            .err()
            .map(|(kind, msg)| vec![r.method.to_string(), r.seed.to_string(), kind.clone(), msg.clone()])
    });
    let bytes = csv_bytes(header, &["method", "seed", "kind", "message"], failures)?;
    out.write(&format!("{prefix}failures.csv"), &bytes)?;

    let first_seed = results.iter().map(|r| r.seed).min();
    for r in results {
        let Ok(o) = &r.output else { continue };
        let mut buf = Vec::new();
        let run_header = format!("{header}# run.method={}\n# run.seed={}\n# run.best_epoch={}\n", r.method, r.seed, o.best_epoch);
        write_epoch_log(&mut buf, &run_header, &o.log)?;
        out.write(&format!("{prefix}logs/{}_seed{}.csv", r.method, r.seed), &buf)?;
        let keep = match policy {
            CheckpointPolicy::None => false,
            CheckpointPolicy::First => Some(r.seed) == first_seed,
            CheckpointPolicy::All => true,
        };
        if keep {
            let mut ck = Checkpoint::new(o.params.clone());
            ck.meta.insert("kind".into(), "prediction".into());
            ck.meta.insert("method".into(), r.method.to_string());
            ck.meta.insert("seed".into(), r.seed.to_string());
            ck.meta.insert("best_epoch".into(), o.best_epoch.to_string());
            ck.meta.insert("dataset".into(), dataset.to_string());
            ck.save(&out.path(&format!("{prefix}checkpoints/{}_seed{}.ckpt", r.method, r.seed))?)?;
        }
    }
    Ok(())
}

/// Full protocol for a fixed settings object: CTR on the tuning seed,
/// tuning, then all seeds.
fn protocol(data: &PreparedData, settings: &RealSettings, methods: &[Method]) -> Result<(Vec<RunResult>, Vec<TuningRow>)> {
    let tune_seed = settings.seeds[0];
    let prop = fit_propensity(data, &settings.ctr, tune_seed)?;
    let (configs, tuning) = tune(data, &prop, settings, methods, tune_seed)?;
    let results = run_seeds(data, settings, &configs, &prop)?;
    Ok((results, tuning))
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub dataset: String,
    pub results: Vec<RunResult>,
    pub summary: Vec<SummaryRow>,
}

impl TrainReport {
    pub fn mean_dcg(&self, method: Method, k: usize) -> Option<f64> {
        self.summary
            .iter()
            .find(|r| r.method == method && r.k == k)
            .map(|r| r.dcg.0)
    }
}

/// The `train` command.
pub fn run_train(cfg: &mut Config, seeds: Option<Vec<u64>>, out: &OutputDir) -> Result<TrainReport> {
    let (settings, data) = RealSettings::from_config(cfg, seeds, &[Method::MrdrDl])?;
    let (results, tuning) = protocol(&data, &settings, &settings.methods)?;
    let header = csv_header("train", cfg);
    write_run_artifacts(out, "", &header, &data.name, &results, &tuning, settings.checkpoints)?;
    let summary = summarize(&results, &settings.methods, &settings.ks);
    write_summary(out, "summary.csv", &header, &data.name, &summary)?;
    Ok(TrainReport { dataset: data.name, results, summary })
}

/// The `ablate` command: the four double-learning variants, one wide row
/// per method with the mean and std of every metric at every K.
pub fn run_ablate(cfg: &mut Config, seeds: Option<Vec<u64>>, out: &OutputDir) -> Result<TrainReport> {
    let (settings, data) = RealSettings::from_config(cfg, seeds, &ABLATION_METHODS)?;
    let (results, tuning) = protocol(&data, &settings, &settings.methods)?;
    let header = csv_header("ablate", cfg);
    write_run_artifacts(out, "", &header, &data.name, &results, &tuning, settings.checkpoints)?;
    let summary = summarize(&results, &settings.methods, &settings.ks);
    let mut cols = vec!["dataset".to_string(), "method".to_string()];
    for &k in &settings.ks {
        for m in ["dcg", "recall_normalized", "recall_hitcount"] {
            cols.push(format!("{m}@{k}_mean"));
            cols.push(format!("{m}@{k}_std"));
        }
    }
    cols.push("n_seeds".into());
    cols.push("n_failed".into());
    let wide = settings.methods.iter().map(|&m| {
        let rows: Vec<&SummaryRow> = summary.iter().filter(|r| r.method == m).collect();
        let mut f = vec![data.name.clone(), m.to_string()];
        for r in &rows {
            for (mean, std) in [r.dcg, r.recall_normalized, r.recall_hitcount] {
                f.push(fmt_f64(mean));
                f.push(fmt_f64(std));
            }
        }
        f.push(rows.first().map_or(0, |r| r.n_seeds).to_string());
        f.push(rows.first().map_or(0, |r| r.n_failed).to_string());
        f
    });
    let col_refs: Vec<&str> = cols.iter().map(String::as_str).collect();
    out.write("ablation.csv", &csv_bytes(&header, &col_refs, wide)?)?;
    write_summary(out, "summary.csv", &header, &data.name, &summary)?;
    Ok(TrainReport { dataset: data.name, results, summary })
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub ratio: SampleRatio,
    pub effective_ratio: f64,
    pub summary: Vec<SummaryRow>,
    pub best: bool,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub method: Method,
    pub select_k: usize,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn best_ratio(&self) -> Option<SampleRatio> {
        self.rows.iter().find(|r| r.best).map(|r| r.ratio)
    }
}

/// The `sweep` command: one DR-family method across sample ratios. The
/// best ratio is the one with the highest mean DCG at `sweep.k`.
pub fn run_sweep(cfg: &mut Config, seeds: Option<Vec<u64>>, out: &OutputDir) -> Result<SweepReport> {
    let ratios: Vec<SampleRatio> = cfg.get_list("sweep.ratios", &SWEEP_RATIOS)?;
    if cfg.contains("grid.train.ratio") {
        return Err(Error::Config("the sweep sets train.ratio itself; drop it from the grid".into()));
    }
    let select_k: usize = cfg.get_or("sweep.k", 4)?;
    let (settings, data) = RealSettings::from_config(cfg, seeds, &[Method::MrdrDl])?;
    let [method] = settings.methods[..] else {
        return Err(Error::Config("sweep takes exactly one method".into()));
    };
    if method.double_spec().is_none() {
        return Err(Error::Config(format!("{method} has no sample ratio; pick a DR-family method")));
    }
    if !settings.ks.contains(&select_k) {
        return Err(Error::Config(format!("sweep.k={select_k} is not among ks")));
    }
    let header = csv_header("sweep", cfg);
    let mut rows = Vec::new();
    for &ratio in &ratios {
        let mut local = settings.clone();
        for g in &mut local.grid {
            g.config.sample_ratio = ratio;
        }
        local.base.sample_ratio = ratio;
        let (results, tuning) = protocol(&data, &local, &[method])?;
        let prefix = format!("ratio_{ratio}/");
        write_run_artifacts(out, &prefix, &header, &data.name, &results, &tuning, settings.checkpoints)?;
        let effective_ratio = match ratio {
            SampleRatio::Ratio(r) => r as f64,
            SampleRatio::All => data.train.universe_size() as f64 / data.train.num_clicks() as f64,
        };
        if ratio == SampleRatio::All {
            log::info!("ratio All: effective ratio {effective_ratio:.2}");
        }
        rows.push(SweepRow {
            ratio,
            effective_ratio,
            summary: summarize(&results, &[method], &settings.ks),
            best: false,
        });
    }
    let score = |r: &SweepRow| r.summary.iter().find(|s| s.k == select_k).map_or(f64::NAN, |s| s.dcg.0);
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in rows.iter().enumerate() {
        let s = score(r);
        if s.is_finite() && best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    if let Some((i, _)) = best {
        rows[i].best = true;
    }
    let mut cols = vec!["method", "dataset", "ratio", "effective_ratio"];
    cols.extend(SUMMARY_COLUMNS);
    cols.push("best");
    let csv_rows = rows.iter().flat_map(|r| {
        let name = data.name.clone();
        r.summary.iter().map(move |s| {
            let mut f = vec![method.to_string(), name.clone(), r.ratio.to_string(), fmt_f64(r.effective_ratio)];
            f.extend(summary_fields(s));
            f.push(r.best.to_string());
            f
        })
    });
    out.write("sweep.csv", &csv_bytes(&header, &cols, csv_rows)?)?;
    Ok(SweepReport { method, select_k, rows })
}

/// The `eval` command: scores a saved prediction checkpoint on the test set
/// of `dataset`.
pub fn run_eval(cfg: &mut Config, out: &OutputDir) -> Result<crate::metrics::MetricTable> {
    let ck_path: PathBuf = cfg.require::<String>("checkpoint")?.into();
    let manifest_path: PathBuf = cfg.require::<String>("dataset")?.into();
    let ks = cfg.get_list("ks", &DEFAULT_KS)?;
    let data = prepare(&DatasetManifest::load(&manifest_path)?)?;
    let ck = load_checkpoint(&ck_path)?;
    let table = evaluate(&ck.params, &data.test, &ks)?;
    let method = ck.meta.get("method").cloned().unwrap_or_else(|| "unknown".into());
    let seed = ck.meta.get("seed").and_then(|s| s.parse().ok()).unwrap_or(0);
    let records: Vec<MetricRecord> = table
        .rows
        .iter()
        .map(|row| MetricRecord { method: method.clone(), dataset: data.name.clone(), seed, row: *row })
        .collect();
    let mut buf = Vec::new();
    write_metric_csv(&mut buf, &csv_header("eval", cfg), &records)?;
    out.write("eval.csv", &buf)?;
    Ok(table)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::MissingDataset {
            path: path.to_path_buf(),
            hint: "run `train` first; checkpoints are written under <out>/checkpoints".into(),
        });
    }
    let ck = Checkpoint::load(path)?;
    if ck.meta.get("kind").map(String::as_str) == Some("propensity") {
        return Err(Error::Validation("this is a propensity checkpoint, not a prediction model".into()));
    }
    Ok(ck)
}
