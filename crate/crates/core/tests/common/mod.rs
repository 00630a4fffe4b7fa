#![allow(dead_code)]

pub mod grad;

use std::path::{Path, PathBuf};

use cvr_debias::experiment::config::Config;
use cvr_debias::matrix::Dense;
use cvr_debias::numeric::sigmoid;
use cvr_debias::rng::cell_uniform;
use cvr_debias::synthetic::{
    match_marginals, mnar_mar_benchmark, sample_world, GroundTruth, DEFAULT_RATING_MARGINAL,
};

/// Low-rank-ish ratings on an `m × n` grid, deterministic in `seed`.
pub fn structured_ratings(m: usize, n: usize, seed: u64) -> Dense<u8> {
    let rank = 3;
    let user = |u: usize, f: usize| cell_uniform(seed, 100 + f as u64, u, 0) * 2.0 - 1.0;
    let item = |i: usize, f: usize| cell_uniform(seed, 200 + f as u64, 0, i) * 2.0 - 1.0;
    let scores = Dense::from_fn(m, n, |u, i| {
        let dot: f64 = (0..rank).map(|f| user(u, f) * item(i, f)).sum();
        sigmoid(2.0 * dot) + 0.05 * cell_uniform(seed, 300, u, i)
    });
    match_marginals(&scores, &[0.3, 0.2, 0.2, 0.15, 0.15]).unwrap()
}

pub fn tiny_ground_truth(m: usize, n: usize, seed: u64) -> GroundTruth {
    GroundTruth::from_ratings(structured_ratings(m, n, seed), 1.0, 0.5, DEFAULT_RATING_MARGINAL).unwrap()
}

/// Writes an MNAR/MAR benchmark drawn from a tiny ground truth and returns
/// the manifest path.
pub fn write_benchmark(dir: &Path, m: usize, n: usize, seed: u64) -> PathBuf {
    let gt = tiny_ground_truth(m, n, seed);
    let world = sample_world(&gt, seed);
    let (mnar, mar) = mnar_mar_benchmark(&world, n / 3, seed).unwrap();
    std::fs::create_dir_all(dir).unwrap();
    mnar.save(&dir.join("mnar.txt")).unwrap();
    mar.save(&dir.join("mar.txt")).unwrap();
    let manifest = dir.join("manifest.txt");
    std::fs::write(
        &manifest,
        "name=tiny\nformat=conversions\ntrain=mnar.txt\ntest=mar.txt\nsplit_seed=0\ntrain_fraction=0.8\n",
    )
    .unwrap();
    manifest
}

/// A fast configuration for the real-data protocols on the tiny benchmark.
pub fn quick_config(manifest: &Path) -> Config {
    Config::parse(&format!(
        "dataset={}\ntrain.dim=4\ntrain.batch_size=64\ntrain.lr=0.01\ntrain.max_epochs=6\n\
         ctr.dim=4\nctr.max_epochs=4\nctr.batch_size=64\nworkers=2\n",
        manifest.display()
    ))
    .unwrap()
}

/// Every regular file under `dir` with its bytes, sorted by relative path.
pub fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(base: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(base, &p, out);
            } else {
                let rel = p.strip_prefix(base).unwrap().display().to_string();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}
