//! Constant-memory error sketch.
//!
//! `K` repeated arrays of `2^L` buckets. Every bucket accumulates
//! `(count, label sum, base-prediction sum)` over the records hashed into it,
//! so storage is exactly `2^L * K * 3` doubles no matter how long the stream
//! runs. A write touches one bucket per array; a read looks at one bucket per
//! array and turns it into a neighbor entry whose similarity is the bucket's
//! share of its array's mass.
//!
//! # Snapshot format
//!
//! All integers and floats little-endian:
//!
//! | offset | size | field                      |
//! |--------|------|----------------------------|
//! | 0      | 4    | magic `b"SFSK"`            |
//! | 4      | 4    | version, `u32` (= 1)       |
//! | 8      | 4    | dim, `u32`                 |
//! | 12     | 4    | bits per hash `L`, `u32`   |
//! | 16     | 4    | number of arrays `K`, `u32`|
//! | 20     | 8    | seed, `u64`                |
//! | 28     | ...  | `K * 2^L * 3` `f64` values |
//!
//! Accumulators are row-major: array, then bucket, then
//! `(count, label_sum, base_sum)`. Per-array totals and the accepted-write
//! counter are recomputed from the counts on restore; the filtered-write
//! counter is not persisted.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::lsh::{BankParams, SrpHashBank};
use crate::memory::{
    check_sigma, passes_filter, ErrorMemory, MemoryRecord, NeighborEntry, Neighborhood, Source,
};

pub const SNAPSHOT_MAGIC: [u8; 4] = *b"SFSK";
pub const SNAPSHOT_VERSION: u32 = 1;
const HEADER_LEN: usize = 28;

/// How a bucket's label and prediction sums are normalised on read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    /// Divide by the bucket's own count, giving bucket means in `[0, 1]`.
    #[default]
    BucketMean,
    /// Divide by the array's total count, exactly like the similarity.
    GlobalTotal,
}

#[derive(Debug, Clone)]
pub struct ErrorSketch {
    bank: SrpHashBank,
    readout: Readout,
    cells: Vec<f64>,
    totals: Vec<f64>,
    writes_accepted: u64,
    writes_filtered: u64,
}

impl ErrorSketch {
    pub fn new(bank: SrpHashBank) -> Self {
        let k = bank.num_hashes();
        let cells = vec![0.0; k * bank.num_buckets() * 3];
        Self {
            bank,
            readout: Readout::default(),
            cells,
            totals: vec![0.0; k],
            writes_accepted: 0,
            writes_filtered: 0,
        }
    }

    pub fn from_params(params: BankParams) -> Result<Self> {
        Ok(Self::new(SrpHashBank::from_params(params)?))
    }

    pub fn with_readout(mut self, readout: Readout) -> Self {
        self.readout = readout;
        self
    }

    pub fn set_readout(&mut self, readout: Readout) {
        self.readout = readout;
    }

    pub fn readout(&self) -> Readout {
        self.readout
    }

    pub fn bank(&self) -> &SrpHashBank {
        &self.bank
    }

    pub fn num_arrays(&self) -> usize {
        self.bank.num_hashes()
    }

    pub fn num_buckets(&self) -> usize {
        self.bank.num_buckets()
    }

    pub fn totals(&self) -> &[f64] {
        &self.totals
    }

    pub fn writes_accepted(&self) -> u64 {
        self.writes_accepted
    }

    pub fn writes_filtered(&self) -> u64 {
        self.writes_filtered
    }

    /// Number of `f64` accumulators held; always `2^L * K * 3`.
    pub fn accumulator_len(&self) -> usize {
        self.cells.len()
    }

    pub fn footprint_bytes(&self) -> usize {
        self.cells.len() * std::mem::size_of::<f64>()
    }

    /// `(count, label_sum, base_sum)` of bucket `bucket` in array `array`.
    pub fn bucket(&self, array: usize, bucket: usize) -> (f64, f64, f64) {
        let i = self.offset(array, bucket);
        (self.cells[i], self.cells[i + 1], self.cells[i + 2])
    }

    #[inline]
    fn offset(&self, array: usize, bucket: usize) -> usize {
        (array * self.bank.num_buckets() + bucket) * 3
    }

    pub fn write(&mut self, record: &MemoryRecord, sigma: Option<f64>) -> Result<bool> {
        check_dim(self.bank.dim(), record.hidden.len())?;
        record.validate()?;
        check_sigma(sigma)?;
        if !passes_filter(record, sigma) {
            self.writes_filtered += 1;
            return Ok(false);
        }
        let mut idx = vec![0; self.bank.num_hashes()];
        self.bank.bucket_indices_into(&record.hidden, &mut idx)?;
        let label = f64::from(record.label);
        for (array, &b) in idx.iter().enumerate() {
            let i = self.offset(array, b);
            self.cells[i] += 1.0;
            self.cells[i + 1] += label;
            self.cells[i + 2] += record.base_pred;
            self.totals[array] += 1.0;
        }
        self.writes_accepted += 1;
        Ok(true)
    }

    pub fn read(&self, query: &[f64]) -> Result<Neighborhood> {
        let mut idx = vec![0; self.bank.num_hashes()];
        self.bank.bucket_indices_into(query, &mut idx)?;
        let mut entries = Vec::with_capacity(idx.len());
        for (array, &b) in idx.iter().enumerate() {
            let (count, label_sum, base_sum) = self.bucket(array, b);
            if count <= 0.0 {
                continue;
            }
            let total = self.totals[array];
            let denom = match self.readout {
                Readout::BucketMean => count,
                Readout::GlobalTotal => total,
            };
            entries.push(NeighborEntry {
                similarity: count / total,
                label: label_sum / denom,
                base: base_sum / denom,
            });
        }
        if entries.is_empty() {
            return Err(Error::EmptyNeighborhood);
        }
        Ok(Neighborhood {
            entries,
            source: Source::Sketch,
        })
    }

    /// Zeroes every accumulator and counter; the hash bank is kept.
    pub fn reset(&mut self) {
        self.cells.fill(0.0);
        self.totals.fill(0.0);
        self.writes_accepted = 0;
        self.writes_filtered = 0;
    }

    /// Full-scan recount of each array's mass.
    pub fn recount_totals(&self) -> Vec<f64> {
        let per_array = self.bank.num_buckets() * 3;
        self.cells
            .chunks_exact(per_array)
            .map(|arr| arr.iter().step_by(3).sum())
            .collect()
    }

    /// True when the incrementally maintained totals equal a full recount.
    pub fn audit(&self) -> bool {
        self.recount_totals() == self.totals
    }

    pub fn snapshot(&self) -> Vec<u8> {
        let p = self.bank.params();
        let mut out = Vec::with_capacity(HEADER_LEN + self.footprint_bytes());
        out.extend_from_slice(&SNAPSHOT_MAGIC);
        out.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
        out.extend_from_slice(&(p.dim as u32).to_le_bytes());
        out.extend_from_slice(&p.bits_per_hash.to_le_bytes());
        out.extend_from_slice(&(p.num_hashes as u32).to_le_bytes());
        out.extend_from_slice(&p.seed.to_le_bytes());
        for v in &self.cells {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Reads the header of a snapshot without decoding the accumulators.
    pub fn snapshot_params(bytes: &[u8]) -> Result<BankParams> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Snapshot("truncated header".into()));
        }
        if bytes[0..4] != SNAPSHOT_MAGIC {
            return Err(Error::Snapshot("bad magic".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != SNAPSHOT_VERSION {
            return Err(Error::Snapshot(format!("unsupported version {version}")));
        }
        Ok(BankParams {
            dim: u32_at(8) as usize,
            bits_per_hash: u32_at(12),
            num_hashes: u32_at(16) as usize,
            seed: u64::from_le_bytes(bytes[20..28].try_into().unwrap()),
        })
    }

    pub fn restore(bytes: &[u8], params: BankParams) -> Result<Self> {
        let stored = Self::snapshot_params(bytes)?;
        if stored != params {
            return Err(Error::ParameterMismatch(format!(
                "snapshot has {stored:?}, expected {params:?}"
            )));
        }
        let mut sketch = Self::from_params(params)?;
        let body = &bytes[HEADER_LEN..];
        if body.len() != sketch.footprint_bytes() {
            return Err(Error::Snapshot(format!(
                "expected {} accumulator bytes, found {}",
                sketch.footprint_bytes(),
                body.len()
            )));
        }
        for (cell, chunk) in sketch.cells.iter_mut().zip(body.chunks_exact(8)) {
            *cell = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        sketch.totals = sketch.recount_totals();
        sketch.writes_accepted = sketch.totals.first().copied().unwrap_or(0.0) as u64;
        Ok(sketch)
    }
}

impl ErrorMemory for ErrorSketch {
    fn dim(&self) -> usize {
        self.bank.dim()
    }

    fn write(&mut self, record: &MemoryRecord, sigma: Option<f64>) -> Result<bool> {
        ErrorSketch::write(self, record, sigma)
    }

    fn retrieve(&self, query: &[f64]) -> Result<Neighborhood> {
        self.read(query)
    }

    fn reset(&mut self) {
        ErrorSketch::reset(self)
    }
}
