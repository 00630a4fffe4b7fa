//! Per-user ranking metrics on the MAR test panel.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::datasets::ConversionDataset;
use crate::error::{Error, Result};
use crate::estimators::fmt_f64;
use crate::models::FmParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecallMode {
    /// `hits@K / positives`.
    Normalized,
    /// Raw `hits@K`.
    HitCount,
}

impl FromStr for RecallMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normalized" => Ok(Self::Normalized),
            "hit-count" | "hitcount" => Ok(Self::HitCount),
            _ => Err(Error::Config(format!("unknown recall mode '{s}'"))),
        }
    }
}

impl fmt::Display for RecallMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Normalized => "normalized",
            Self::HitCount => "hit-count",
        })
    }
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    Ok(())
}

/// `Σ_{j ≤ K} rel_j / log2(j + 1)`, unnormalized.
pub fn dcg_at_k(relevance: &[bool], k: usize) -> Result<f64> {
    check_k(k)?;
    if relevance.is_empty() {
        log::warn!("DCG of an empty ranking");
        return Ok(0.0);
    }
    Ok(relevance
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, &r)| r)
        .map(|(j, _)| 1.0 / ((j + 2) as f64).log2())
        .sum())
}

pub fn recall_at_k(relevance: &[bool], positives: usize, k: usize, mode: RecallMode) -> Result<f64> {
    check_k(k)?;
    let hits = relevance.iter().take(k).filter(|&&r| r).count() as f64;
    match mode {
        RecallMode::HitCount => Ok(hits),
        RecallMode::Normalized if positives == 0 => Err(Error::UndefinedMetric(
            "normalized recall of a user without positives".into(),
        )),
        RecallMode::Normalized => Ok(hits / positives as f64),
    }
}

/// Orders `(item, score)` by score descending, ties by item ascending.
pub fn rank_items(scored: &mut [(u32, f64)]) {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricRow {
    pub k: usize,
    pub dcg: f64,
    pub recall_normalized: f64,
    pub recall_hitcount: f64,
}

/// Per-K metrics averaged uniformly over evaluated users.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricTable {
    pub rows: Vec<MetricRow>,
    pub users: usize,
}

impl MetricTable {
    pub fn at(&self, k: usize) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.k == k)
    }

    pub fn dcg(&self, k: usize) -> f64 {
        self.at(k).map(|r| r.dcg).unwrap_or(f64::NAN)
    }
}

/// Scores each user's test items with `score(user, item)` and averages
/// the per-user metrics over users holding at least one conversion.
pub fn evaluate_with(
    mut score: impl FnMut(usize, usize) -> f64,
    test: &ConversionDataset,
    ks: &[usize],
) -> Result<MetricTable> {
    for &k in ks {
        check_k(k)?;
    }
    let mut sums = vec![[0.0f64; 3]; ks.len()];
    let mut users = 0usize;
    let mut scored = Vec::new();
    let mut rel = Vec::new();
    for u in 0..test.num_users() {
        let events = test.user_events(u);
        let positives = events.iter().filter(|e| e.converted).count();
        if positives == 0 {
            continue;
        }
        users += 1;
        scored.clear();
        scored.extend(events.iter().map(|e| (e.item, score(u, e.item as usize))));
        rank_items(&mut scored);
        rel.clear();
        rel.extend(scored.iter().map(|&(i, _)| test.label(u, i as usize) == Some(true)));
        for (slot, &k) in sums.iter_mut().zip(ks) {
            slot[0] += dcg_at_k(&rel, k)?;
            slot[1] += recall_at_k(&rel, positives, k, RecallMode::Normalized)?;
            slot[2] += recall_at_k(&rel, positives, k, RecallMode::HitCount)?;
        }
    }
    if users == 0 {
        return Err(Error::EmptyTest);
    }
    let n = users as f64;
    Ok(MetricTable {
        rows: ks
            .iter()
            .zip(&sums)
            .map(|(&k, s)| MetricRow {
                k,
                dcg: s[0] / n,
                recall_normalized: s[1] / n,
                recall_hitcount: s[2] / n,
            })
            .collect(),
        users,
    })
}

/// Ranks by the model's logit, which orders pairs exactly as its CVR.
pub fn evaluate(model: &FmParams, test: &ConversionDataset, ks: &[usize]) -> Result<MetricTable> {
    if model.num_users() < test.num_users() || model.num_items() < test.num_items() {
        return Err(Error::Lookup(format!(
            "{}x{} model cannot score a {}x{} test set",
            model.num_users(),
            model.num_items(),
            test.num_users(),
            test.num_items()
        )));
    }
    evaluate_with(|u, i| model.logit_unchecked(u, i), test, ks)
}

/// One line of the metric CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord {
    pub method: String,
    pub dataset: String,
    pub seed: u64,
    pub row: MetricRow,
}

pub fn write_metric_csv<W: Write>(mut out: W, header: &str, records: &[MetricRecord]) -> Result<()> {
    out.write_all(header.as_bytes())
        .map_err(|e| Error::io("<metrics>", e))?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "dataset", "seed", "K", "dcg", "recall_normalized", "recall_hitcount"])?;
    for r in records {
        w.write_record([
            r.method.clone(),
            r.dataset.clone(),
            r.seed.to_string(),
            r.row.k.to_string(),
            fmt_f64(r.row.dcg),
            fmt_f64(r.row.recall_normalized),
            fmt_f64(r.row.recall_hitcount),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<metrics>", e))?;
    Ok(())
}
