//! Factorization machine over one-hot user and item features, and Adam.

mod adam;
mod checkpoint;
mod fm;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::Checkpoint;
pub use fm::{fm_gradients, Example, FmParams};
