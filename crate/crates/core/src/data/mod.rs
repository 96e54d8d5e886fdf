//! Data ingestion, chronological slotting and synthetic drifting streams.

mod csv_io;
mod schema;
mod slots;
mod synth;

pub use csv_io::{load_csv, read_csv, LoadedData, SchemaSidecar};
pub use schema::{
    bucketize, EncodedRow, Encoding, FeatureSchema, FieldKind, FieldSpec, Row, Value, Vocab,
};
pub use slots::{drift_report, make_slots, write_drift_csv, Slot, SlotDiagnostics};
pub use synth::{DriftKind, DriftScenario, Generated};
