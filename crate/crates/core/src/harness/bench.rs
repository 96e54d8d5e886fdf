//! Throughput of sketch writes and reads as the sketch fills up.

use std::hint::black_box;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lsh::BankParams;
use crate::memory::{ErrorMemory, MemoryRecord};
use crate::oracle::OracleMemory;
use crate::sketch::ErrorSketch;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub dim: usize,
    pub bits_per_hash: u32,
    pub num_arrays: usize,
    /// Number of records held by the sketch at each measurement, ascending.
    pub fill_levels: Vec<usize>,
    /// Operations per timed batch.
    pub batch: usize,
    /// Timed batches per level; the fastest one is reported.
    pub repeats: usize,
    pub oracle_capacity: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            bits_per_hash: 8,
            num_arrays: 32,
            fill_levels: vec![1_000, 100_000, 1_000_000],
            batch: 10_000,
            repeats: 5,
            oracle_capacity: 1_000,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelReport {
    pub fill: usize,
    pub writes_per_sec: f64,
    pub reads_per_sec: f64,
    pub footprint_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub levels: Vec<LevelReport>,
    /// Time per write at the highest fill level over that at the lowest.
    pub write_time_ratio: f64,
    pub read_time_ratio: f64,
    pub footprint_constant: bool,
    pub oracle_capacity: usize,
    /// Largest oracle size seen while storing three times its capacity.
    pub oracle_max_len: usize,
}

const POOL: usize = 4_096;

pub fn bench(config: &BenchConfig) -> Result<BenchReport> {
    if config.fill_levels.is_empty() || config.batch == 0 || config.repeats == 0 {
        return Err(Error::InvalidParameter(
            "bench needs fill levels, a batch size and at least one repeat".into(),
        ));
    }
    if config.fill_levels[0] == 0 || config.fill_levels.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter(
            "fill levels must be positive and ascending".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let pool: Vec<MemoryRecord> = (0..POOL)
        .map(|_| {
            let h = (0..config.dim)
                .map(|_| rng.sample(StandardNormal))
                .collect();
            MemoryRecord::new(h, rng.random_range(0..=1u8), rng.random())
        })
        .collect::<Result<_>>()?;

    let mut sketch = ErrorSketch::from_params(BankParams {
        dim: config.dim,
        bits_per_hash: config.bits_per_hash,
        num_hashes: config.num_arrays,
        seed: config.seed,
    })?;
    let mut written = 0usize;
    let mut levels = Vec::with_capacity(config.fill_levels.len());
    for &fill in &config.fill_levels {
        while written < fill {
            sketch.write(&pool[written % POOL], None)?;
            written += 1;
        }
        let mut best_write = Duration::MAX;
        let mut best_read = Duration::MAX;
        for rep in 0..config.repeats {
            // writes go to a copy so the measured level stays put
            let mut copy = sketch.clone();
            let start = Instant::now();
            for i in 0..config.batch {
                copy.write(&pool[(rep * config.batch + i) % POOL], None)?;
            }
            best_write = best_write.min(start.elapsed());
            black_box(&copy);

            // queries are records already written, so none reads empty
            let seen = written.min(POOL);
            let start = Instant::now();
            for i in 0..config.batch {
                black_box(sketch.retrieve(&pool[(rep + i * 7) % seen].hidden)?);
            }
            best_read = best_read.min(start.elapsed());
        }
        let per_sec = |d: Duration| config.batch as f64 / d.as_secs_f64().max(1e-12);
        levels.push(LevelReport {
            fill,
            writes_per_sec: per_sec(best_write),
            reads_per_sec: per_sec(best_read),
            footprint_bytes: sketch.footprint_bytes(),
        });
        log::info!("bench fill {fill}: {:?}", levels.last());
    }

    let first = &levels[0];
    let last = &levels[levels.len() - 1];
    let footprint_constant = levels
        .iter()
        .all(|l| l.footprint_bytes == first.footprint_bytes);

    let mut oracle = OracleMemory::new(config.dim, config.oracle_capacity, 1)?;
    let mut oracle_max_len = 0;
    for i in 0..3 * config.oracle_capacity {
        oracle.store(&pool[i % POOL], None)?;
        oracle_max_len = oracle_max_len.max(oracle.len());
    }

    Ok(BenchReport {
        write_time_ratio: first.writes_per_sec / last.writes_per_sec,
        read_time_ratio: first.reads_per_sec / last.reads_per_sec,
        levels,
        footprint_constant,
        oracle_capacity: config.oracle_capacity,
        oracle_max_len,
    })
}
