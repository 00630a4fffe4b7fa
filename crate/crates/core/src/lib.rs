//! Debiased post-click conversion-rate (CVR) estimation under
//! missing-not-at-random click feedback.
//!
//! The crate covers the full experimental stack: dataset ingestion, a
//! semi-synthetic ground-truth generator, the naive / EIB / IPS / DR loss
//! estimators with analytic bias and variance, a factorization machine
//! with Adam, propensity estimation, the double-learning trainer with MRDR
//! imputation and its ablations, ranking metrics, and experiment drivers
//! that emit CSV reports.

pub mod datasets;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod matrix;
pub mod metrics;
pub mod models;
pub mod numeric;
pub mod propensity;
pub mod rng;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
pub use matrix::Dense;
