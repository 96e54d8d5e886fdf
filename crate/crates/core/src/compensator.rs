//! Attention-weighted error estimation and output compensation.
//!
//! Given a neighborhood of `(s_i, y_i, y_base_i)` triples, weights are a
//! temperature softmax over the similarities. The weighted label mean `ȳ` and
//! weighted prediction mean `ȳ_base` mix into an error estimate
//! `y_err = γ·ȳ + (1−γ)·ȳ_base − y_base`, and the served output is
//! `clamp(y_base + λ·y_err, 0, 1)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::{ErrorMemory, Neighborhood};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompensationConfig {
    /// Compensation weight λ.
    pub lambda: f64,
    /// Mix between label error (1) and prediction error (0).
    pub gamma: f64,
    /// Softmax temperature.
    pub tau: f64,
}

impl Default for CompensationConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            gamma: 1.0,
            tau: 0.1,
        }
    }
}

impl CompensationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidParameter(format!(
                "lambda must lie in [0, 1], got {}",
                self.lambda
            )));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidParameter(format!(
                "gamma must lie in [0, 1], got {}",
                self.gamma
            )));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        Ok(())
    }
}

/// Temperature softmax with max subtraction. Exactly tied maxima share weight
/// equally, which is also the limit as `tau` goes to zero.
pub fn attention_weights(similarities: &[f64], tau: f64) -> Result<Vec<f64>> {
    if similarities.is_empty() {
        return Err(Error::EmptyInput("similarities"));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tau must be positive, got {tau}"
        )));
    }
    let max = similarities
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = similarities
        .iter()
        .map(|s| ((s - max) / tau).exp())
        .collect();
    let sum: f64 = w.iter().sum();
    for v in &mut w {
        *v /= sum;
    }
    Ok(w)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorEstimate {
    /// Attention-weighted label mean.
    pub label_mean: f64,
    /// Attention-weighted base-prediction mean.
    pub base_mean: f64,
    pub y_err: f64,
}

pub fn estimate_error(
    neighborhood: &Neighborhood,
    y_base: f64,
    config: &CompensationConfig,
) -> Result<ErrorEstimate> {
    if neighborhood.is_empty() {
        return Err(Error::EmptyNeighborhood);
    }
    if !(config.tau > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tau must be positive, got {}",
            config.tau
        )));
    }
    // Unnormalised softmax numerators, divided once at the end so that a
    // neighborhood of identical labels reproduces that label exactly.
    let max = neighborhood
        .entries
        .iter()
        .map(|e| e.similarity)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut norm = 0.0;
    let mut label_mean = 0.0;
    let mut base_mean = 0.0;
    for e in &neighborhood.entries {
        let w = ((e.similarity - max) / config.tau).exp();
        norm += w;
        label_mean += w * e.label;
        base_mean += w * e.base;
    }
    label_mean /= norm;
    base_mean /= norm;
    let y_err = config.gamma * label_mean + (1.0 - config.gamma) * base_mean - y_base;
    Ok(ErrorEstimate {
        label_mean,
        base_mean,
        y_err,
    })
}

pub fn compensate(y_base: f64, y_err: f64, lambda: f64) -> f64 {
    (y_base + lambda * y_err).clamp(0.0, 1.0)
}

/// Per-prediction trace record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub y_base: f64,
    pub y_err: f64,
    pub y_pred: f64,
    pub n_neighbors: usize,
    pub fallback: bool,
    pub label_mean: Option<f64>,
    pub base_mean: Option<f64>,
}

/// Reads `memory` at `hidden`, estimates the base model's error and returns the
/// compensated output. An empty neighborhood falls back to `y_base` unchanged.
pub fn predict<M: ErrorMemory + ?Sized>(
    y_base: f64,
    hidden: &[f64],
    memory: &M,
    config: &CompensationConfig,
) -> Result<Diagnostics> {
    let neighborhood = match memory.retrieve(hidden) {
        Ok(n) => n,
        Err(Error::EmptyNeighborhood) => {
            return Ok(Diagnostics {
                y_base,
                y_err: 0.0,
                y_pred: y_base,
                n_neighbors: 0,
                fallback: true,
                label_mean: None,
                base_mean: None,
            })
        }
        Err(e) => return Err(e),
    };
    let est = estimate_error(&neighborhood, y_base, config)?;
    Ok(Diagnostics {
        y_base,
        y_err: est.y_err,
        y_pred: compensate(y_base, est.y_err, config.lambda),
        n_neighbors: neighborhood.len(),
        fallback: false,
        label_mean: Some(est.label_mean),
        base_mean: Some(est.base_mean),
    })
}
