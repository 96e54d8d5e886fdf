//! Experiment configuration.
//!
//! A single TOML file with the sections `[data]`, `[model]`, `[memory]`,
//! `[compensation]`, `[methods]` and `[output]`:
//!
//! ```toml
//! seed = 3                      # optional; overrides every section's seed
//!
//! [data]
//! source = "synthetic"          # or "csv"
//! kind = "abrupt_concept"       # remaining keys as in `DriftScenario`
//! rows_per_slot = 5000
//!
//! [model]                       # `ModelConfig`; every key optional
//! hidden_sizes = [64, 32]
//!
//! [memory]
//! kind = "sketch"               # or "oracle"
//! num_arrays = 32               # K, required
//! bits_per_hash = 8             # L
//! refresh = "on_model_update"   # "never" or { every_n_slots = 2 }
//!
//! [compensation]
//! lambda = 0.5                  # required
//! tau = 0.1
//! gamma = 1.0
//!
//! [methods]
//! run = ["frozen", "incremental", "reloop2", "incremental+reloop2"]
//!
//! [output]
//! results = "results.csv"
//! trace = "trace.jsonl"
//! ```
//!
//! A CSV source uses `source = "csv"`, `path`, `schema` (the JSON sidecar),
//! `n_slots` and an optional `split_timestamp`. Relative paths are resolved
//! against the directory of the config file.
//!
//! Environment variables named `SLOWFAST__<SECTION>__<KEY>` override single
//! keys after the file is read; `SLOWFAST__<KEY>` sets a top-level key. Values
//! are parsed as TOML (`0.3`, `true`, `["frozen"]`, `{ every_n_slots = 2 }`) and
//! anything that does not parse is taken as a string.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::compensator::CompensationConfig;
use crate::data::DriftScenario;
use crate::error::{Error, Result};
use crate::lsh::{BankParams, MAX_BITS};
use crate::model::ModelConfig;
use crate::oracle::DEFAULT_CAPACITY;
use crate::sketch::Readout;

pub const ENV_PREFIX: &str = "SLOWFAST__";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    pub memory: MemoryConfig,
    pub compensation: CompensationSection,
    pub methods: MethodsConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataConfig {
    Synthetic(DriftScenario),
    Csv(CsvSource),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub path: PathBuf,
    /// JSON schema sidecar.
    pub schema: PathBuf,
    #[serde(default = "default_n_slots")]
    pub n_slots: usize,
    /// Overrides the sidecar's split.
    #[serde(default)]
    pub split_timestamp: Option<i64>,
}

fn default_n_slots() -> usize {
    10
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryKind {
    #[default]
    Sketch,
    Oracle,
}

/// When the error memory is cleared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Refresh {
    Never,
    EveryNSlots(usize),
    /// Whenever the method's base model has been updated.
    #[default]
    OnModelUpdate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryConfig {
    #[serde(default)]
    pub kind: MemoryKind,
    /// Number of hash arrays `K`.
    pub num_arrays: usize,
    /// Bits per hash `L`.
    #[serde(default = "default_bits")]
    pub bits_per_hash: u32,
    #[serde(default = "default_memory_seed")]
    pub seed: u64,
    /// Error filter threshold; `None` stores every record.
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub readout: Readout,
    #[serde(default)]
    pub refresh: Refresh,
    /// On a due refresh, clear the memory before the slot just revealed is
    /// written, so it keeps the most recent slot. With `false` the clear
    /// happens after the slot's write and model update.
    #[serde(default = "default_true")]
    pub refresh_keeps_latest: bool,
    #[serde(default = "default_capacity")]
    pub oracle_capacity: usize,
    /// Neighbors returned by the oracle; defaults to `num_arrays`.
    #[serde(default)]
    pub oracle_k: Option<usize>,
    #[serde(default = "default_keep")]
    pub keep_probability: f64,
}

fn default_bits() -> u32 {
    8
}
fn default_memory_seed() -> u64 {
    42
}
fn default_true() -> bool {
    true
}
fn default_capacity() -> usize {
    DEFAULT_CAPACITY
}
fn default_keep() -> f64 {
    1.0
}

impl MemoryConfig {
    pub fn bank_params(&self, dim: usize) -> BankParams {
        BankParams {
            dim,
            bits_per_hash: self.bits_per_hash,
            num_hashes: self.num_arrays,
            seed: self.seed,
        }
    }

    pub fn oracle_k(&self) -> usize {
        self.oracle_k.unwrap_or(self.num_arrays)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("[memory] {m}")));
        if self.num_arrays == 0 {
            return bad("num_arrays must be >= 1".into());
        }
        if self.bits_per_hash == 0 || self.bits_per_hash > MAX_BITS {
            return bad(format!("bits_per_hash must lie in [1, {MAX_BITS}]"));
        }
        if let Some(s) = self.sigma {
            if !(s >= 0.0 && s.is_finite()) {
                return bad(format!("sigma must be >= 0, got {s}"));
            }
        }
        if let Refresh::EveryNSlots(0) = self.refresh {
            return bad("every_n_slots needs n >= 1".into());
        }
        if self.oracle_capacity == 0 || self.oracle_k() == 0 {
            return bad("oracle_capacity and oracle_k must be >= 1".into());
        }
        if !(self.keep_probability > 0.0 && self.keep_probability <= 1.0) {
            return bad(format!(
                "keep_probability must lie in (0, 1], got {}",
                self.keep_probability
            ));
        }
        Ok(())
    }
}

/// `[compensation]`: `lambda` has no default and must be chosen per scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompensationSection {
    pub lambda: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
}

fn default_gamma() -> f64 {
    1.0
}
fn default_tau() -> f64 {
    0.1
}

impl From<CompensationSection> for CompensationConfig {
    fn from(s: CompensationSection) -> Self {
        CompensationConfig {
            lambda: s.lambda,
            gamma: s.gamma,
            tau: s.tau,
        }
    }
}

impl From<CompensationConfig> for CompensationSection {
    fn from(c: CompensationConfig) -> Self {
        CompensationSection {
            lambda: c.lambda,
            gamma: c.gamma,
            tau: c.tau,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "frozen")]
    Frozen,
    #[serde(rename = "incremental")]
    Incremental,
    #[serde(rename = "reloop2")]
    Reloop2,
    #[serde(rename = "incremental+reloop2")]
    IncrementalReloop2,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Frozen,
        Method::Incremental,
        Method::Reloop2,
        Method::IncrementalReloop2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Frozen => "frozen",
            Method::Incremental => "incremental",
            Method::Reloop2 => "reloop2",
            Method::IncrementalReloop2 => "incremental+reloop2",
        }
    }

    /// Whether the base model keeps training on revealed slots.
    pub fn updates_model(self) -> bool {
        matches!(self, Method::Incremental | Method::IncrementalReloop2)
    }

    /// Whether outputs are corrected from the error memory.
    pub fn compensates(self) -> bool {
        matches!(self, Method::Reloop2 | Method::IncrementalReloop2)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodsConfig {
    pub run: Vec<Method>,
    /// Learning rate of the one-pass slot updates; defaults to the model's.
    #[serde(default)]
    pub incremental_learning_rate: Option<f64>,
    #[serde(default)]
    pub incremental_batch_size: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Per-slot and aggregate metrics CSV.
    #[serde(default)]
    pub results: Option<PathBuf>,
    /// Per-prediction diagnostics, JSON lines.
    #[serde(default)]
    pub trace: Option<PathBuf>,
    /// Model checkpoint written by `train`.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    /// Sketch snapshot of the `reloop2` memory at the end of a run.
    #[serde(default)]
    pub snapshot: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_toml_with_overrides(text, std::iter::empty::<(String, String)>())
    }

    /// Parses `text`, then applies `SLOWFAST__...` overrides from `vars`.
    pub fn from_toml_with_overrides<I, K, V>(text: &str, vars: I) -> Result<Self>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        apply_overrides(&mut table, vars)?;
        let config: Self = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let config = config.with_seed_override();
        config.validate()?;
        Ok(config)
    }

    /// Reads a config file, applying overrides from the process environment.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml_with_overrides(&text, std::env::vars())?;
        if let Some(dir) = path.parent() {
            config.resolve_paths(dir);
        }
        Ok(config)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Makes relative data paths relative to `dir`.
    pub fn resolve_paths(&mut self, dir: &Path) {
        if let DataConfig::Csv(c) = &mut self.data {
            for p in [&mut c.path, &mut c.schema] {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
    }

    fn with_seed_override(mut self) -> Self {
        if let Some(seed) = self.seed {
            self.model.seed = seed;
            self.memory.seed = seed;
            if let DataConfig::Synthetic(s) = &mut self.data {
                s.seed = seed;
            }
        }
        self
    }

    pub fn compensation(&self) -> CompensationConfig {
        self.compensation.into()
    }

    pub fn validate(&self) -> Result<()> {
        match &self.data {
            DataConfig::Synthetic(s) => s.validate()?,
            DataConfig::Csv(c) => {
                if c.n_slots == 0 {
                    return Err(Error::Config("[data] n_slots must be >= 1".into()));
                }
            }
        }
        self.model.validate()?;
        self.memory.validate()?;
        self.compensation().validate()?;
        let m = &self.methods;
        if m.run.is_empty() {
            return Err(Error::Config(
                "[methods] run must list at least one method".into(),
            ));
        }
        for (i, a) in m.run.iter().enumerate() {
            if m.run[..i].contains(a) {
                return Err(Error::Config(format!("[methods] '{a}' listed twice")));
            }
        }
        if let Some(lr) = m.incremental_learning_rate {
            if !(lr >= 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!(
                    "[methods] incremental_learning_rate must be >= 0, got {lr}"
                )));
            }
        }
        if m.incremental_batch_size == Some(0) {
            return Err(Error::Config(
                "[methods] incremental_batch_size must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Applies `SLOWFAST__SECTION__KEY=value` pairs to a parsed table. Variables
/// without the prefix are ignored.
pub fn apply_overrides<I, K, V>(table: &mut toml::Table, vars: I) -> Result<()>
where
    I: IntoIterator<Item = (K, V)>,
    K: AsRef<str>,
    V: AsRef<str>,
{
    for (key, raw) in vars {
        let Some(path) = key.as_ref().strip_prefix(ENV_PREFIX) else {
            continue;
        };
        let parts: Vec<String> = path.split("__").map(str::to_lowercase).collect();
        if parts.iter().any(String::is_empty) || parts.len() > 2 {
            return Err(Error::Config(format!(
                "malformed override '{}'",
                key.as_ref()
            )));
        }
        let value = parse_value(raw.as_ref());
        log::debug!("config override {} = {value}", parts.join("."));
        match parts.as_slice() {
            [key] => {
                table.insert(key.clone(), value);
            }
            [section, key] => {
                let entry = table
                    .entry(section.clone())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()));
                let toml::Value::Table(t) = entry else {
                    return Err(Error::Config(format!("'{section}' is not a section")));
                };
                t.insert(key.clone(), value);
            }
            _ => unreachable!(),
        }
    }
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
