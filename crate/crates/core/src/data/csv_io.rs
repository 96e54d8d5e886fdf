//! CSV ingestion with a JSON schema sidecar.
//!
//! The sidecar looks like
//!
//! ```json
//! { "fields": [ {"name": "user", "kind": "user_id"},
//!               {"name": "click", "kind": "label"},
//!               {"name": "ts", "kind": "timestamp"} ],
//!   "split_timestamp": 1700000000 }
//! ```
//!
//! Every declared field must appear in the CSV header; extra columns are
//! ignored. Rows are sorted by timestamp (stable) and split into rows strictly
//! before `split_timestamp` (train) and the rest (test). Without a configured
//! split the median timestamp is used.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::schema::{FeatureSchema, FieldKind, FieldSpec, Row, Value};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchemaSidecar {
    pub fields: Vec<FieldSpec>,
    #[serde(default)]
    pub split_timestamp: Option<i64>,
}

impl SchemaSidecar {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone)]
pub struct LoadedData {
    pub train: Vec<Row>,
    pub test: Vec<Row>,
    /// Malformed rows that were skipped.
    pub skipped: usize,
    pub split_timestamp: i64,
}

pub fn load_csv(path: &Path, schema: &FeatureSchema, split: Option<i64>) -> Result<LoadedData> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema, split)
}

pub fn read_csv<R: std::io::Read>(
    reader: R,
    schema: &FeatureSchema,
    split: Option<i64>,
) -> Result<LoadedData> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    let column = |name: &str| header.iter().position(|h| h.trim() == name);
    let mut columns = Vec::with_capacity(schema.fields.len());
    for f in &schema.fields {
        match column(&f.name) {
            Some(c) => columns.push(c),
            None if f.kind == FieldKind::Label => {
                return Err(Error::Schema(format!("missing label column '{}'", f.name)))
            }
            None => return Err(Error::Schema(format!("missing column '{}'", f.name))),
        }
    }

    let mut rows = Vec::new();
    let mut skipped = 0;
    for (line, record) in rdr.records().enumerate() {
        let record = match record {
            Ok(r) => r,
            Err(_) => {
                skipped += 1;
                continue;
            }
        };
        match parse_row(schema, &columns, &record, line as i64) {
            Some(row) => rows.push(row),
            None => skipped += 1,
        }
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} malformed rows");
    }

    rows.sort_by_key(|r| r.timestamp);
    let split_timestamp = split.unwrap_or_else(|| {
        if rows.is_empty() {
            0
        } else {
            rows[rows.len() / 2].timestamp
        }
    });
    let cut = rows.partition_point(|r| r.timestamp < split_timestamp);
    let test = rows.split_off(cut);
    Ok(LoadedData {
        train: rows,
        test,
        skipped,
        split_timestamp,
    })
}

fn parse_row(
    schema: &FeatureSchema,
    columns: &[usize],
    record: &csv::StringRecord,
    line: i64,
) -> Option<Row> {
    let mut features = Vec::with_capacity(schema.num_features());
    let mut label = None;
    let mut timestamp = line;
    for (field, &col) in schema.fields.iter().zip(columns) {
        let raw = record.get(col)?.trim();
        match field.kind {
            FieldKind::Label => {
                label = match raw {
                    "1" | "1.0" => Some(1),
                    "0" | "0.0" => Some(0),
                    _ => return None,
                }
            }
            FieldKind::Timestamp => timestamp = raw.parse().ok()?,
            FieldKind::Numerical => {
                let v: f64 = raw.parse().ok()?;
                if !v.is_finite() {
                    return None;
                }
                features.push(Value::Number(v));
            }
            FieldKind::Categorical | FieldKind::UserId | FieldKind::ItemId => {
                features.push(Value::Token(raw.to_owned()))
            }
        }
    }
    Some(Row {
        features,
        label: label?,
        timestamp,
        truth: None,
    })
}
