//! Experiment harness: train the base model once, stream the test slots in
//! order and compare methods.
//!
//! Each slot runs the phases of [`Phase`] in order: every method scores the
//! slot from features alone, labels are revealed, metrics are recorded, the
//! error memories of compensating methods receive the slot's
//! `(hidden, label, base prediction)` records, incremental methods take one
//! pass over the slot, and memory refresh policies are applied.
//!
//! Methods:
//!
//! - `frozen`: the trained model, never updated.
//! - `incremental`: a copy of the trained model updated after each slot.
//! - `reloop2`: the frozen model with memory compensation.
//! - `incremental+reloop2`: the incremental model with memory compensation.
//!   Its memory records carry the predictions made before the slot's update.

mod bench;
mod config;
mod runner;
mod sweep;

pub use bench::{bench, BenchConfig, BenchReport, LevelReport};
pub use config::{
    apply_overrides, CompensationSection, CsvSource, DataConfig, ExperimentConfig, MemoryConfig,
    MemoryKind, Method, MethodsConfig, OutputConfig, Refresh, ENV_PREFIX,
};
pub use runner::{
    prepare_from_checkpoint, run_and_write, run_experiment, run_stream, train, Dataset,
    MemoryStore, Phase, PhaseEvent, Prepared, RunResults, SlotMetrics,
};
pub use sweep::{sweep, sweep_csv, SweepParam, SweepPoint};
