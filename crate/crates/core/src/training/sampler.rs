//! Click / non-click sampling over the grid.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::datasets::ConversionDataset;
use crate::error::{Error, Result};

/// Unclicked cells drawn per clicked cell in a prediction batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SampleRatio {
    Ratio(usize),
    /// A uniform pass over the whole grid.
    All,
}

impl fmt::Display for SampleRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Ratio(r) => write!(f, "{r}"),
            Self::All => f.write_str("All"),
        }
    }
}

impl FromStr for SampleRatio {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(Self::All);
        }
        s.parse()
            .map(Self::Ratio)
            .map_err(|_| Error::Config(format!("sample ratio must be a count or All, got '{s}'")))
    }
}

/// Shuffles `0..n` and holds out `round(n · fraction)` indices.
pub fn split_indices(n: usize, fraction: f64, rng: &mut impl Rng) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let hold = ((n as f64 * fraction).round() as usize).min(n);
    let held = idx.split_off(n - hold);
    (idx, held)
}

/// `count` uniform draws (with replacement) from the unclicked cells of
/// `ds`, capped at the number of unclicked cells.
pub fn sample_unclicked(ds: &ConversionDataset, count: usize, rng: &mut impl Rng) -> Result<Vec<(u32, u32)>> {
    let unclicked = ds.universe_size() - ds.num_clicks();
    if count == 0 {
        return Ok(Vec::new());
    }
    if unclicked == 0 {
        return Err(Error::Sampling("every cell is clicked".into()));
    }
    let count = if count > unclicked {
        log::warn!("requested {count} unclicked cells, only {unclicked} exist; capping");
        unclicked
    } else {
        count
    };
    let (m, n) = (ds.num_users(), ds.num_items());
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let u = rng.random_range(0..m);
        let i = rng.random_range(0..n);
        if !ds.is_clicked(u, i) {
            out.push((u as u32, i as u32));
        }
    }
    Ok(out)
}
