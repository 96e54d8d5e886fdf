//! Exact raw-sample memory with brute-force cosine top-k retrieval.

use std::cmp::Ordering;
use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Error, Result};
use crate::memory::{
    check_sigma, passes_filter, ErrorMemory, MemoryRecord, NeighborEntry, Neighborhood, Source,
};

pub const DEFAULT_CAPACITY: usize = 100_000;

#[derive(Debug, Clone)]
struct Stored {
    record: MemoryRecord,
    norm: f64,
}

/// FIFO-bounded store of raw records.
#[derive(Debug, Clone)]
pub struct OracleMemory {
    dim: usize,
    capacity: usize,
    k: usize,
    keep_probability: f64,
    rng: ChaCha8Rng,
    records: VecDeque<Stored>,
}

impl OracleMemory {
    pub fn new(dim: usize, capacity: usize, k: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dim must be >= 1".into()));
        }
        if capacity == 0 {
            return Err(Error::InvalidParameter("capacity must be >= 1".into()));
        }
        if k == 0 {
            return Err(Error::InvalidParameter("k must be >= 1".into()));
        }
        Ok(Self {
            dim,
            capacity,
            k,
            keep_probability: 1.0,
            rng: ChaCha8Rng::seed_from_u64(0),
            records: VecDeque::new(),
        })
    }

    /// Random down-sampling: each record that passes the error filter is kept
    /// with probability `p`.
    pub fn with_down_sampling(mut self, p: f64, seed: u64) -> Result<Self> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "keep probability must lie in (0, 1], got {p}"
            )));
        }
        self.keep_probability = p;
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Stored records, oldest first.
    pub fn records(&self) -> impl Iterator<Item = &MemoryRecord> {
        self.records.iter().map(|s| &s.record)
    }

    pub fn store(&mut self, record: &MemoryRecord, sigma: Option<f64>) -> Result<bool> {
        check_dim(self.dim, record.hidden.len())?;
        record.validate()?;
        check_sigma(sigma)?;
        if !passes_filter(record, sigma) {
            return Ok(false);
        }
        if self.keep_probability < 1.0 && self.rng.random::<f64>() >= self.keep_probability {
            return Ok(false);
        }
        if self.records.len() == self.capacity {
            self.records.pop_front();
        }
        let norm = record.hidden.iter().map(|v| v * v).sum::<f64>().sqrt();
        self.records.push_back(Stored {
            record: record.clone(),
            norm,
        });
        Ok(true)
    }

    /// The `min(k, len)` most cosine-similar records, most similar first; equal
    /// similarities keep insertion order.
    pub fn top_k(&self, query: &[f64], k: usize) -> Result<Neighborhood> {
        check_dim(self.dim, query.len())?;
        if k == 0 {
            return Err(Error::InvalidParameter("k must be >= 1".into()));
        }
        if self.records.is_empty() {
            return Err(Error::EmptyMemory);
        }
        let qn = query.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut scored: Vec<(f64, usize)> = self
            .records
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let sim = if qn == 0.0 || s.norm == 0.0 {
                    0.0
                } else {
                    let dot: f64 = s.record.hidden.iter().zip(query).map(|(a, b)| a * b).sum();
                    (dot / (qn * s.norm)).clamp(-1.0, 1.0)
                };
                (sim, i)
            })
            .collect();
        let rank = |a: &(f64, usize), b: &(f64, usize)| -> Ordering {
            b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
        };
        let take = k.min(scored.len());
        if take < scored.len() {
            scored.select_nth_unstable_by(take - 1, rank);
            scored.truncate(take);
        }
        scored.sort_unstable_by(rank);
        let entries = scored
            .into_iter()
            .map(|(sim, i)| {
                let r = &self.records[i].record;
                NeighborEntry {
                    similarity: sim,
                    label: f64::from(r.label),
                    base: r.base_pred,
                }
            })
            .collect();
        Ok(Neighborhood {
            entries,
            source: Source::Oracle,
        })
    }

    pub fn clear(&mut self) {
        self.records.clear();
    }
}

impl ErrorMemory for OracleMemory {
    fn dim(&self) -> usize {
        self.dim
    }

    fn write(&mut self, record: &MemoryRecord, sigma: Option<f64>) -> Result<bool> {
        self.store(record, sigma)
    }

    fn retrieve(&self, query: &[f64]) -> Result<Neighborhood> {
        match self.top_k(query, self.k) {
            Err(Error::EmptyMemory) => Err(Error::EmptyNeighborhood),
            other => other,
        }
    }

    fn reset(&mut self) {
        self.clear()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(h: &[f64], y: u8, yb: f64) -> MemoryRecord {
        MemoryRecord::new(h.to_vec(), y, yb).unwrap()
    }

    #[test]
    fn fifo_eviction() {
        let mut m = OracleMemory::new(1, 2, 5).unwrap();
        for i in 0..3 {
            m.store(&rec(&[i as f64 + 1.0], 1, 0.1 * i as f64), None)
                .unwrap();
        }
        let kept: Vec<f64> = m.records().map(|r| r.hidden[0]).collect();
        assert_eq!(kept, vec![2.0, 3.0]);
    }

    #[test]
    fn filter_rejects_small_errors() {
        let mut m = OracleMemory::new(1, 10, 5).unwrap();
        assert!(!m.store(&rec(&[1.0], 1, 0.95), Some(0.1)).unwrap());
        assert!(m.is_empty());
    }

    #[test]
    fn grows_until_capacity() {
        let mut m = OracleMemory::new(2, 1000, 5).unwrap();
        for i in 0..100 {
            m.store(&rec(&[i as f64, 1.0], 0, 0.5), None).unwrap();
        }
        assert_eq!(m.len(), 100);
    }

    #[test]
    fn self_similarity() {
        let mut m = OracleMemory::new(2, 10, 5).unwrap();
        m.store(&rec(&[0.3, 0.4], 1, 0.2), None).unwrap();
        let n = m.top_k(&[0.3, 0.4], 5).unwrap();
        assert_eq!(n.len(), 1);
        let e = n.entries[0];
        assert!((e.similarity - 1.0).abs() < 1e-15);
        assert_eq!((e.label, e.base), (1.0, 0.2));
    }

    #[test]
    fn nearest_wins() {
        let mut m = OracleMemory::new(2, 10, 5).unwrap();
        m.store(&rec(&[1.0, 0.0], 1, 0.5), None).unwrap();
        m.store(&rec(&[0.0, 1.0], 0, 0.5), None).unwrap();
        let n = m.top_k(&[1.0, 0.1], 1).unwrap();
        assert_eq!(n.entries[0].label, 1.0);
    }

    #[test]
    fn ties_prefer_older() {
        let mut m = OracleMemory::new(2, 10, 5).unwrap();
        m.store(&rec(&[1.0, 0.0], 0, 0.1), None).unwrap();
        m.store(&rec(&[2.0, 0.0], 1, 0.2), None).unwrap();
        m.store(&rec(&[3.0, 0.0], 1, 0.3), None).unwrap();
        let n = m.top_k(&[1.0, 0.0], 2).unwrap();
        let bases: Vec<f64> = n.entries.iter().map(|e| e.base).collect();
        assert_eq!(bases, vec![0.1, 0.2]);
    }

    #[test]
    fn empty_memory_errors() {
        let m = OracleMemory::new(2, 10, 5).unwrap();
        assert!(matches!(m.top_k(&[1.0, 0.0], 3), Err(Error::EmptyMemory)));
        assert!(matches!(
            m.retrieve(&[1.0, 0.0]),
            Err(Error::EmptyNeighborhood)
        ));
    }

    #[test]
    fn down_sampling_is_seeded() {
        let run = || {
            let mut m = OracleMemory::new(1, 1000, 5)
                .unwrap()
                .with_down_sampling(0.5, 42)
                .unwrap();
            for i in 0..400 {
                m.store(&rec(&[i as f64], 1, 0.0), None).unwrap();
            }
            m.len()
        };
        let n = run();
        assert_eq!(n, run());
        assert!((150..250).contains(&n), "{n}");
    }
}
