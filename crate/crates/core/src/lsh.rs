//! Signed random projection (SimHash) hash family.
//!
//! A bank holds `K` independent sets of `L` Gaussian hyperplanes. Each set maps
//! a vector to an `L`-bit bucket index: bit `j` (counting from the most
//! significant end) is 1 when the projection onto hyperplane `j` is strictly
//! positive and 0 otherwise, so a zero projection maps to 0.
//!
//! Hyperplanes are never stored; they are regenerated from [`BankParams`].
//! Set `k` draws its components from `ChaCha8Rng::seed_from_u64(seed ^ k)`,
//! plane by plane, using the Ziggurat standard-normal sampler of `rand_distr`.
//! ChaCha8 and the Ziggurat tables are platform independent, so identical
//! parameters give identical banks everywhere.

use std::f64::consts::PI;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Largest supported `bits_per_hash`; keeps `2^L` addressable as an array index.
pub const MAX_BITS: u32 = 30;

/// Parameters that fully determine a hash bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BankParams {
    pub dim: usize,
    pub bits_per_hash: u32,
    pub num_hashes: usize,
    pub seed: u64,
}

impl BankParams {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidParameter("dim must be >= 1".into()));
        }
        if self.bits_per_hash == 0 || self.bits_per_hash > MAX_BITS {
            return Err(Error::InvalidParameter(format!(
                "bits_per_hash must be in [1, {MAX_BITS}], got {}",
                self.bits_per_hash
            )));
        }
        if self.num_hashes == 0 {
            return Err(Error::InvalidParameter("num_hashes must be >= 1".into()));
        }
        Ok(())
    }

    /// Number of buckets per hash set, `2^L`.
    pub fn num_buckets(&self) -> usize {
        1usize << self.bits_per_hash
    }
}

/// `K` sets of `L` signed-random-projection hyperplanes over `R^d`.
#[derive(Debug)]
pub struct SrpHashBank {
    params: BankParams,
    // K * L * d, set-major then plane-major.
    planes: Vec<f64>,
    zero_inputs: AtomicU64,
}

impl Clone for SrpHashBank {
    fn clone(&self) -> Self {
        Self {
            params: self.params,
            planes: self.planes.clone(),
            zero_inputs: AtomicU64::new(self.zero_inputs.load(Ordering::Relaxed)),
        }
    }
}

impl SrpHashBank {
    pub fn new(dim: usize, bits_per_hash: u32, num_hashes: usize, seed: u64) -> Result<Self> {
        Self::from_params(BankParams {
            dim,
            bits_per_hash,
            num_hashes,
            seed,
        })
    }

    pub fn from_params(params: BankParams) -> Result<Self> {
        params.validate()?;
        let per_set = params.bits_per_hash as usize * params.dim;
        let mut planes = Vec::with_capacity(per_set * params.num_hashes);
        for k in 0..params.num_hashes {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ k as u64);
            planes.extend((0..per_set).map(|_| rng.sample::<f64, _>(StandardNormal)));
        }
        Ok(Self {
            params,
            planes,
            zero_inputs: AtomicU64::new(0),
        })
    }

    pub fn params(&self) -> &BankParams {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.params.dim
    }

    pub fn bits_per_hash(&self) -> u32 {
        self.params.bits_per_hash
    }

    pub fn num_hashes(&self) -> usize {
        self.params.num_hashes
    }

    pub fn num_buckets(&self) -> usize {
        self.params.num_buckets()
    }

    /// Total number of hyperplanes, `K * L`.
    pub fn num_planes(&self) -> usize {
        self.params.num_hashes * self.params.bits_per_hash as usize
    }

    /// Hyperplane `bit` of hash set `set`.
    pub fn plane(&self, set: usize, bit: usize) -> &[f64] {
        let d = self.params.dim;
        let start = (set * self.params.bits_per_hash as usize + bit) * d;
        &self.planes[start..start + d]
    }

    /// How many all-zero inputs this bank has hashed. Such inputs land in bucket 0
    /// of every set.
    pub fn zero_input_count(&self) -> u64 {
        self.zero_inputs.load(Ordering::Relaxed)
    }

    pub fn bucket_indices(&self, x: &[f64]) -> Result<Vec<usize>> {
        let mut out = vec![0; self.params.num_hashes];
        self.bucket_indices_into(x, &mut out)?;
        Ok(out)
    }

    /// Writes the `K` bucket indices of `x` into `out`.
    pub fn bucket_indices_into(&self, x: &[f64], out: &mut [usize]) -> Result<()> {
        check_dim(self.params.dim, x.len())?;
        check_dim(self.params.num_hashes, out.len())?;
        if x.iter().all(|&v| v == 0.0) {
            if self.zero_inputs.fetch_add(1, Ordering::Relaxed) == 0 {
                log::warn!("hashing an all-zero vector; every set maps it to bucket 0");
            } else {
                log::debug!("hashing an all-zero vector");
            }
        }
        let d = self.params.dim;
        let bits = self.params.bits_per_hash as usize;
        for (set, slot) in self.planes.chunks_exact(bits * d).zip(out.iter_mut()) {
            let mut index = 0usize;
            for plane in set.chunks_exact(d) {
                index = (index << 1) | projection_bit(plane, x);
            }
            *slot = index;
        }
        Ok(())
    }
}

#[inline]
fn projection_bit(plane: &[f64], x: &[f64]) -> usize {
    let dot: f64 = plane.iter().zip(x).map(|(w, v)| w * v).sum();
    usize::from(dot > 0.0)
}

/// One SRP bit: 1 when `plane . x > 0`, else 0.
pub fn hash_bit(plane: &[f64], x: &[f64]) -> Result<u8> {
    check_dim(plane.len(), x.len())?;
    Ok(projection_bit(plane, x) as u8)
}

/// Probability that two vectors with the given cosine similarity share an
/// `bits`-bit SRP bucket: `(1 - arccos(cosine) / pi)^bits`.
pub fn collision_probability(cosine: f64, bits: u32) -> f64 {
    let c = cosine.clamp(-1.0, 1.0);
    (1.0 - c.acos() / PI).powi(bits as i32)
}

/// Cosine similarity; zero when either vector is all zeros.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}
