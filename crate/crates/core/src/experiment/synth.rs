//! Semi-synthetic estimator comparison: mean relative error of the five
//! estimators under the five predicted-CVR settings, averaged over sampled
//! worlds.

use std::path::PathBuf;

use super::config::Config;
use super::{csv_header, parallel_map, workers, OutputDir};
use crate::datasets::{load_ratings, DatasetFormat};
use crate::error::{Error, Result};
use crate::estimators::{
    dr_bias, dr_loss, dr_variance, eib_loss, fmt_f64, ideal_loss, ips_bias, ips_loss, ips_variance,
    naive_loss, prediction_errors, relative_error, EstimateReport, EstimateRow, EstimatorConfig,
    EstimatorKind, LossInputs, Normalizer,
};
use crate::numeric::mean_std;
use crate::synthetic::{
    heuristic_imputed_errors, make_predicted_matrix, mnar_mar_benchmark, noisy_propensity,
    sample_world, GroundTruth, HeuristicOptions, ImputationKind, MfConfig, PredictedKind,
    SynthConfig, DEFAULT_RATING_MARGINAL,
};

pub const ML100K_HINT: &str = "download MovieLens 100K (https://files.grouplens.org/datasets/movielens/ml-100k.zip), \
unzip it and pass the path of u.data via `data=` or --set data=PATH";

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSettings {
    pub data: Option<PathBuf>,
    pub format: DatasetFormat,
    pub ground_truth: Option<PathBuf>,
    pub synth: SynthConfig,
    pub beta: f64,
    pub seeds: Vec<u64>,
    pub estimators: EstimatorConfig,
    pub heuristic: HeuristicOptions,
    pub save_ground_truth: bool,
    /// Items per user in the MAR panel of the exported benchmark; 0 skips it.
    pub benchmark_panel: usize,
    pub benchmark_seed: u64,
    pub workers: usize,
}

fn parse_dist(s: &str) -> Result<[f64; 5]> {
    let v: Vec<f64> = super::config::parse_list(s).map_err(|_| Error::Config(format!("bad dist '{s}'")))?;
    v.try_into()
        .map_err(|_| Error::Config("dist needs five fractions".into()))
}

impl SynthSettings {
    /// Reads every key (writing defaults back) so the CSV header is complete.
    pub fn from_config(cfg: &mut Config, seeds_override: Option<Vec<u64>>) -> Result<Self> {
        let data = cfg.get_str("data").map(PathBuf::from);
        let ground_truth = cfg.get_str("ground_truth").map(PathBuf::from);
        if data.is_none() && ground_truth.is_none() {
            return Err(Error::MissingDataset {
                path: PathBuf::from("<unset>"),
                hint: ML100K_HINT.into(),
            });
        }
        let format: DatasetFormat = cfg.get_or("data_format", DatasetFormat::MovieLens100k)?;
        let dist_default = DEFAULT_RATING_MARGINAL
            .iter()
            .map(|p| p.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let dist = parse_dist(&cfg.get_or("synth.dist", dist_default)?)?;
        let d = MfConfig::default();
        let mf = MfConfig {
            rank: cfg.get_or("mf.rank", d.rank)?,
            epochs: cfg.get_or("mf.epochs", d.epochs)?,
            learning_rate: cfg.get_or("mf.lr", d.learning_rate)?,
            l2: cfg.get_or("mf.l2", d.l2)?,
            seed: cfg.get_or("mf.seed", d.seed)?,
        };
        let synth = SynthConfig {
            mf,
            rating_marginal: dist,
            ctr_scale: cfg.get_or("synth.p", 1.0)?,
            ctr_decay: cfg.get_or("synth.alpha", 0.5)?,
        };
        let seeds = match seeds_override {
            Some(s) => {
                cfg.set("seeds", s.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","));
                s
            }
            None => match cfg.get_str("seeds") {
                Some(s) => super::config::parse_seed_list(s)?,
                None => {
                    let s: Vec<u64> = (0..20).collect();
                    cfg.set("seeds", "0..20");
                    s
                }
            },
        };
        let estimators = EstimatorConfig {
            eib_normalizer: cfg.get_or("estimators.eib_normalizer", Normalizer::Clicked)?,
            ips_normalizer: cfg.get_or("estimators.ips_normalizer", Normalizer::Universe)?,
            propensity_floor: cfg.get_or("estimators.propensity_floor", 1e-4)?,
        };
        let heuristic = HeuristicOptions {
            symmetric_mrdr_denominator: cfg.get_or("synth.mrdr_symmetric_denominator", false)?,
            clicked_only: cfg.get_or("synth.pseudo_rate_clicked_only", false)?,
        };
        Ok(Self {
            data,
            format,
            ground_truth,
            synth,
            beta: cfg.get_or("synth.beta", 0.5)?,
            seeds,
            estimators,
            heuristic,
            save_ground_truth: cfg.get_or("synth.save_ground_truth", false)?,
            benchmark_panel: cfg.get_or("synth.benchmark_panel", 0usize)?,
            benchmark_seed: cfg.get_or("synth.benchmark_seed", 0u64)?,
            workers: workers(cfg)?,
        })
    }
}

/// Per-world values for one setting, in [`EstimatorKind::ALL`] order.
#[derive(Debug, Clone)]
struct WorldResult {
    ideal: f64,
    losses: [f64; 5],
    bias: [Option<f64>; 5],
    variance: [Option<f64>; 5],
}

fn evaluate_world(
    gt: &GroundTruth,
    seed: u64,
    settings: &SynthSettings,
) -> Result<Vec<(PredictedKind, WorldResult)>> {
    let world = sample_world(gt, seed);
    let p_hat = noisy_propensity(gt, &world, settings.beta)?;
    let floor = settings.estimators.propensity_floor;
    let p_floored = p_hat.map(|p| p.max(floor));
    let mut out = Vec::with_capacity(PredictedKind::ALL.len());
    for kind in PredictedKind::ALL {
        let predicted = make_predicted_matrix(kind, gt, seed)?;
        let imputed = |k| heuristic_imputed_errors(k, &world, &p_hat, &predicted, settings.heuristic);
        let e_eib = imputed(ImputationKind::EibDr)?;
        let e_mrdr = imputed(ImputationKind::Mrdr)?;
        let base = LossInputs {
            clicks: &world.clicks,
            conversions: &world.conversions,
            predicted: &predicted,
            propensity: &p_hat,
            imputed: Some(&e_eib),
        };
        let with_mrdr = LossInputs { imputed: Some(&e_mrdr), ..base };
        let est = settings.estimators;
        let losses = [
            naive_loss(&base)?,
            eib_loss(&base, est.eib_normalizer)?,
            ips_loss(&base, est.ips_normalizer, floor)?,
            dr_loss(&base, floor)?,
            dr_loss(&with_mrdr, floor)?,
        ];
        let e = prediction_errors(&world.conversions, &predicted)?;
        let p = &gt.true_ctr;
        let ips_analytic = est.ips_normalizer == Normalizer::Universe;
        let bias = [
            None,
            None,
            if ips_analytic { Some(ips_bias(p, &p_floored, &e)?) } else { None },
            Some(dr_bias(p, &p_floored, &e, &e_eib)?),
            Some(dr_bias(p, &p_floored, &e, &e_mrdr)?),
        ];
        let variance = [
            None,
            None,
            if ips_analytic { Some(ips_variance(p, &p_floored, &e)?) } else { None },
            Some(dr_variance(p, &p_floored, &e, &e_eib)?),
            Some(dr_variance(p, &p_floored, &e, &e_mrdr)?),
        ];
        let ideal = ideal_loss(&world.conversions, &predicted)?;
        out.push((kind, WorldResult { ideal, losses, bias, variance }));
    }
    Ok(out)
}

fn mean_opt(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = xs.collect::<Option<Vec<_>>>()?;
    Some(mean_std(&v).0)
}

/// Mean RE table over `settings.seeds` for a prebuilt ground truth.
pub fn estimate_table(gt: &GroundTruth, settings: &SynthSettings) -> Result<EstimateReport> {
    if settings.seeds.is_empty() {
        return Err(Error::Config("seed list is empty".into()));
    }
    let per_seed: Vec<Vec<(PredictedKind, WorldResult)>> =
        parallel_map(&settings.seeds, settings.workers, |&s| evaluate_world(gt, s, settings))
            .into_iter()
            .collect::<Result<_>>()?;
    let mut report = EstimateReport::default();
    for (k, kind) in PredictedKind::ALL.iter().enumerate() {
        let worlds: Vec<&WorldResult> = per_seed.iter().map(|w| &w[k].1).collect();
        for (j, est) in EstimatorKind::ALL.iter().enumerate() {
            let res: Vec<f64> = worlds
                .iter()
                .map(|w| relative_error(w.ideal, w.losses[j]))
                .collect::<Result<_>>()?;
            let (re, re_std) = mean_std(&res);
            let losses: Vec<f64> = worlds.iter().map(|w| w.losses[j]).collect();
            let ideals: Vec<f64> = worlds.iter().map(|w| w.ideal).collect();
            report.rows.push(EstimateRow {
                setting: kind.to_string(),
                estimator: *est,
                loss: mean_std(&losses).0,
                ideal: mean_std(&ideals).0,
                re,
                re_std,
                analytic_bias: mean_opt(worlds.iter().map(|w| w.bias[j])),
                analytic_variance: mean_opt(worlds.iter().map(|w| w.variance[j])),
                n_seeds: settings.seeds.len(),
            });
        }
    }
    Ok(report)
}

/// Wide layout: one row per setting, `RE` and `RE_std` per estimator.
pub fn write_re_table(report: &EstimateReport, header: &str) -> Result<Vec<u8>> {
    let mut buf = header.as_bytes().to_vec();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let mut head = vec!["setting".to_string()];
        for e in EstimatorKind::ALL {
            head.push(e.to_string());
            head.push(format!("{e}_std"));
        }
        w.write_record(&head)?;
        for kind in PredictedKind::ALL {
            let mut rec = vec![kind.to_string()];
            for e in EstimatorKind::ALL {
                let row = report
                    .get(&kind.to_string(), e)
                    .ok_or_else(|| Error::Estimator(format!("missing {kind}/{e}")))?;
                rec.push(fmt_f64(row.re));
                rec.push(fmt_f64(row.re_std));
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<re table>", e))?;
    }
    Ok(buf)
}

#[derive(Debug, Clone)]
pub struct SynthOutcome {
    pub report: EstimateReport,
    pub ground_truth: GroundTruth,
    pub mf_train_rmse: Option<f64>,
}

pub fn build_ground_truth(settings: &SynthSettings) -> Result<(GroundTruth, Option<f64>)> {
    if let Some(dir) = &settings.ground_truth {
        if !dir.join("manifest.txt").exists() {
            return Err(Error::MissingDataset {
                path: dir.clone(),
                hint: "point ground_truth at a directory written by `synth` with synth.save_ground_truth=true".into(),
            });
        }
        return Ok((GroundTruth::load(dir)?, None));
    }
    let path = settings.data.as_ref().expect("checked in from_config");
    if !path.exists() {
        return Err(Error::MissingDataset {
            path: path.clone(),
            hint: ML100K_HINT.into(),
        });
    }
    let events = load_ratings(path, settings.format)?;
    log::info!(
        "completing {} ratings on a {}x{} grid (rank {}, {} epochs)",
        events.len(),
        events.num_users(),
        events.num_items(),
        settings.synth.mf.rank,
        settings.synth.mf.epochs
    );
    let (gt, rmse) = GroundTruth::build(&events, &settings.synth)?;
    log::info!("matrix factorization training RMSE {rmse:.4}");
    Ok((gt, Some(rmse)))
}

/// The `synth` command: builds (or loads) the ground truth, writes
/// `estimates.csv` and `re_table.csv`, and optionally the ground truth and a
/// MNAR/MAR benchmark dataset.
pub fn run_synth(cfg: &mut Config, seeds: Option<Vec<u64>>, out: &OutputDir) -> Result<SynthOutcome> {
    let settings = SynthSettings::from_config(cfg, seeds)?;
    let (gt, rmse) = build_ground_truth(&settings)?;
    let report = estimate_table(&gt, &settings)?;
    let header = csv_header("synth", cfg);
    let mut buf = Vec::new();
    report.write_csv(&mut buf, &header)?;
    out.write("estimates.csv", &buf)?;
    out.write("re_table.csv", &write_re_table(&report, &header)?)?;
    if settings.save_ground_truth {
        gt.save(&out.path("ground_truth")?)?;
    }
    if settings.benchmark_panel > 0 {
        let world = sample_world(&gt, settings.benchmark_seed);
        let (mnar, mar) = mnar_mar_benchmark(&world, settings.benchmark_panel, settings.benchmark_seed)?;
        mnar.save(&out.path("benchmark/mnar.txt")?)?;
        mar.save(&out.path("benchmark/mar.txt")?)?;
        let manifest = format!(
            "name=semi-synthetic\nformat=conversions\ntrain=mnar.txt\ntest=mar.txt\nsplit_seed={}\ntrain_fraction=0.9\n",
            settings.benchmark_seed
        );
        out.write("benchmark/manifest.txt", manifest.as_bytes())?;
        log::info!(
            "benchmark: {} MNAR clicks, {} MAR panel events",
            mnar.num_clicks(),
            mar.num_clicks()
        );
    }
    Ok(SynthOutcome {
        report,
        ground_truth: gt,
        mf_train_rmse: rmse,
    })
}
