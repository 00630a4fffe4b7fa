//! Experiment drivers behind the command-line tool: the semi-synthetic
//! estimator comparison and the real-data train / sweep / ablate / eval
//! protocols. Every table is written as CSV preceded by `#` comments that
//! hold the fully resolved configuration.

pub mod config;
pub mod real;
pub mod synth;

use std::fs;
use std::path::{Component, Path, PathBuf};
use std::thread;

use crate::error::{Error, Result};
use config::Config;

/// Root directory that all outputs of a command must stay under.
#[derive(Debug, Clone)]
pub struct OutputDir {
    root: PathBuf,
}

impl OutputDir {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Resolves a relative path inside the root, creating parent directories.
    pub fn path(&self, rel: &str) -> Result<PathBuf> {
        let rel_path = Path::new(rel);
        if rel_path
            .components()
            .any(|c| !matches!(c, Component::Normal(_)))
        {
            return Err(Error::Config(format!("output path '{rel}' escapes the output directory")));
        }
        let full = self.root.join(rel_path);
        if let Some(parent) = full.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        Ok(full)
    }

    pub fn write(&self, rel: &str, bytes: &[u8]) -> Result<PathBuf> {
        let p = self.path(rel)?;
        fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    }
}

/// Comment block heading every CSV: tool, command, resolved configuration.
/// `workers` is left out since it never changes the numbers.
pub fn csv_header(command: &str, cfg: &Config) -> String {
    let mut out = format!("# cvr-debias {} {command}\n", env!("CARGO_PKG_VERSION"));
    for (k, v) in cfg.iter().filter(|(k, _)| *k != "workers") {
        out.push_str(&format!("# {k}={v}\n"));
    }
    out
}

/// Maps `f` over `items` on up to `workers` threads; output order follows
/// input order regardless of scheduling.
pub fn parallel_map<T: Sync, R: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = workers.max(1).min(items.len().max(1));
    if workers == 1 {
        return items.iter().map(&f).collect();
    }
    let mut slots: Vec<Option<R>> = (0..items.len()).map(|_| None).collect();
    let chunk = items.len().div_ceil(workers);
    thread::scope(|s| {
        for (item_chunk, slot_chunk) in items.chunks(chunk).zip(slots.chunks_mut(chunk)) {
            let f = &f;
            s.spawn(move || {
                for (it, slot) in item_chunk.iter().zip(slot_chunk.iter_mut()) {
                    *slot = Some(f(it));
                }
            });
        }
    });
    slots.into_iter().map(|s| s.expect("every slot filled")).collect()
}

pub(crate) fn default_workers() -> usize {
    thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Thread count from `workers`, defaulting to the machine's parallelism.
/// Deliberately not written back: results do not depend on it.
pub(crate) fn workers(cfg: &Config) -> Result<usize> {
    match cfg.get_str("workers") {
        None => Ok(default_workers()),
        Some(v) => v
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Config(format!("workers must be a positive count, got '{v}'"))),
    }
}
