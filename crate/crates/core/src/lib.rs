//! Streaming error compensation for click-probability models under
//! distribution shift.
//!
//! A trained base model (the slow learner) serves `y_base`. Once labels for
//! served rows arrive, `(hidden, label, y_base)` triples go into an error
//! memory (the fast learner). New predictions read similar past samples from
//! the memory, estimate the base model's current error and correct for it.
//!
//! - [`lsh`]: signed-random-projection hashing.
//! - [`sketch`]: the constant-memory LSH error sketch.
//! - [`oracle`]: exact raw-sample memory with brute-force top-k.
//! - [`compensator`]: attention-weighted error estimation and compensation.
//! - [`model`]: the embedding + MLP base model.
//! - [`data`]: CSV ingestion, slotting and synthetic drift scenarios.
//! - [`metrics`]: AUC, gAUC, log loss.
//! - [`harness`]: the chronological experiment runner, sweeps and benchmarks.

pub mod compensator;
pub mod data;
mod error;
pub mod harness;
pub mod lsh;
pub mod memory;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod sketch;

pub use error::{Error, Result};
