//! Patience-based early stopping.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopDecision {
    pub stop: bool,
    pub improved: bool,
    /// 1-based epoch of the best value seen so far.
    pub best_epoch: usize,
}

/// Stops once `patience` consecutive epochs fail to beat the best value.
/// Non-finite values never count as improvements.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    direction: Direction,
    best: Option<f64>,
    best_epoch: usize,
    epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, direction: Direction) -> Result<Self> {
        if patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        Ok(Self {
            patience,
            direction,
            best: None,
            best_epoch: 0,
            epoch: 0,
            stale: 0,
        })
    }

    pub fn observe(&mut self, metric: f64) -> StopDecision {
        self.epoch += 1;
        let better = metric.is_finite()
            && match (self.best, self.direction) {
                (None, _) => true,
                (Some(b), Direction::Minimize) => metric < b,
                (Some(b), Direction::Maximize) => metric > b,
            };
        if better {
            self.best = Some(metric);
            self.best_epoch = self.epoch;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        StopDecision {
            stop: self.stale >= self.patience,
            improved: better,
            best_epoch: self.best_epoch,
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// Replays a metric log: whether (and after which epoch) training stops,
/// and the best epoch. Returns `(stop_epoch, best_epoch)`.
pub fn early_stopping_check(log: &[f64], patience: usize, direction: Direction) -> Result<(Option<usize>, usize)> {
    let mut s = EarlyStopping::new(patience, direction)?;
    for (k, &m) in log.iter().enumerate() {
        if s.observe(m).stop {
            return Ok((Some(k + 1), s.best_epoch()));
        }
    }
    Ok((None, s.best_epoch()))
}
