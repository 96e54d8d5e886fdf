//! Types shared by the error memories: the records written into them and the
//! neighborhoods read back out.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One observed sample: hidden vector, revealed label, and the base prediction
/// that was served for it.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryRecord {
    pub hidden: Vec<f64>,
    pub label: u8,
    pub base_pred: f64,
}

impl MemoryRecord {
    pub fn new(hidden: Vec<f64>, label: u8, base_pred: f64) -> Result<Self> {
        let record = Self {
            hidden,
            label,
            base_pred,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<()> {
        if self.label > 1 {
            return Err(Error::OutOfRange(format!(
                "label must be 0 or 1, got {}",
                self.label
            )));
        }
        if !(0.0..=1.0).contains(&self.base_pred) {
            return Err(Error::OutOfRange(format!(
                "base prediction must lie in [0, 1], got {}",
                self.base_pred
            )));
        }
        Ok(())
    }

    /// `|label - base_pred|`.
    pub fn abs_error(&self) -> f64 {
        (f64::from(self.label) - self.base_pred).abs()
    }
}

/// Error filter: with a threshold `sigma`, only records whose absolute error
/// exceeds it are kept.
pub fn passes_filter(record: &MemoryRecord, sigma: Option<f64>) -> bool {
    match sigma {
        Some(s) => record.abs_error() > s,
        None => true,
    }
}

pub(crate) fn check_sigma(sigma: Option<f64>) -> Result<()> {
    match sigma {
        Some(s) if !(0.0..=1.0).contains(&s) => Err(Error::InvalidParameter(format!(
            "filter threshold must lie in [0, 1], got {s}"
        ))),
        _ => Ok(()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Sketch,
    Oracle,
}

/// One retrieved neighbor `(s_i, y_i, y_base_i)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborEntry {
    pub similarity: f64,
    pub label: f64,
    pub base: f64,
}

/// The neighbor set feeding error estimation. Never empty when returned by a
/// memory; an empty result is reported as [`Error::EmptyNeighborhood`].
#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhood {
    pub entries: Vec<NeighborEntry>,
    pub source: Source,
}

impl Neighborhood {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn similarities(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.similarity).collect()
    }
}

/// A store of recent error samples that can be queried by hidden vector.
pub trait ErrorMemory {
    fn dim(&self) -> usize;

    /// Stores a record unless the error filter rejects it. Returns whether the
    /// record was accepted.
    fn write(&mut self, record: &MemoryRecord, sigma: Option<f64>) -> Result<bool>;

    fn retrieve(&self, query: &[f64]) -> Result<Neighborhood>;

    fn reset(&mut self);
}
