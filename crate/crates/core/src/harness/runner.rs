//! The chronological slot loop.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use super::config::{DataConfig, ExperimentConfig, MemoryKind, Method, Refresh};
use crate::compensator::{self, CompensationConfig, Diagnostics};
use crate::data::{
    load_csv, make_slots, EncodedRow, FeatureSchema, FieldKind, Row, SchemaSidecar, Slot, Value,
};
use crate::error::{Error, Result};
use crate::memory::{ErrorMemory, MemoryRecord, Neighborhood};
use crate::metrics;
use crate::model::{BaseModel, Checkpoint, Forward};
use crate::oracle::OracleMemory;
use crate::sketch::ErrorSketch;

/// Training rows and test slots of a data source.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub schema: FeatureSchema,
    pub train: Vec<Row>,
    pub slots: Vec<Slot>,
}

impl Dataset {
    pub fn load(config: &DataConfig) -> Result<Self> {
        match config {
            DataConfig::Synthetic(scenario) => {
                let g = scenario.generate()?;
                Ok(Self {
                    schema: crate::data::DriftScenario::schema(),
                    train: g.train,
                    slots: g.slots,
                })
            }
            DataConfig::Csv(c) => {
                let sidecar = SchemaSidecar::load(&c.schema)?;
                let schema = FeatureSchema::new(sidecar.fields)?;
                let split = c.split_timestamp.or(sidecar.split_timestamp);
                let loaded = load_csv(&c.path, &schema, split)?;
                if loaded.skipped > 0 {
                    log::warn!(
                        "{}: skipped {} malformed rows",
                        c.path.display(),
                        loaded.skipped
                    );
                }
                Ok(Self {
                    schema,
                    train: loaded.train,
                    slots: make_slots(loaded.test, c.n_slots)?,
                })
            }
        }
    }
}

/// A trained base model together with the stream it will be evaluated on.
#[derive(Debug, Clone)]
pub struct Prepared {
    /// Fitted on the training rows.
    pub schema: FeatureSchema,
    pub model: BaseModel,
    pub slots: Vec<Slot>,
    pub train_losses: Vec<f64>,
}

impl Prepared {
    pub fn checkpoint(&self, config: &ExperimentConfig) -> Checkpoint {
        Checkpoint::new(
            self.schema.clone(),
            config.model.clone(),
            self.model.clone(),
        )
    }
}

/// Loads the data and trains the shared base model.
pub fn train(config: &ExperimentConfig) -> Result<Prepared> {
    let data = Dataset::load(&config.data)?;
    let mut schema = data.schema;
    if data.train.is_empty() {
        return Err(Error::EmptyInput("training rows"));
    }
    schema.fit(&data.train, config.model.num_buckets)?;
    let rows = schema.encode_all(&data.train)?;
    let mut model = BaseModel::for_schema(&schema, &config.model)?;
    let train_losses = model.fit(&rows, &config.model)?;
    log::info!(
        "trained on {} rows, epoch losses {:?}",
        rows.len(),
        train_losses
    );
    Ok(Prepared {
        schema,
        model,
        slots: data.slots,
        train_losses,
    })
}

/// Pairs a saved model with the test stream of `config`.
pub fn prepare_from_checkpoint(config: &ExperimentConfig, ck: Checkpoint) -> Result<Prepared> {
    let data = Dataset::load(&config.data)?;
    if ck.schema.fields != data.schema.fields {
        return Err(Error::Schema(
            "checkpoint schema does not match the data source".into(),
        ));
    }
    Ok(Prepared {
        schema: ck.schema,
        model: ck.model,
        slots: data.slots,
        train_losses: Vec::new(),
    })
}

/// Steps of one slot, in the order they run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Predict,
    Reveal,
    Evaluate,
    Write,
    Update,
    Refresh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PhaseEvent {
    pub slot: usize,
    pub phase: Phase,
}

/// Metrics of one method on one slot.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlotMetrics {
    pub slot: usize,
    pub method: Method,
    pub rows: usize,
    pub auc: f64,
    pub gauc: f64,
    pub logloss: f64,
    /// Predictions served without compensation because the memory was empty.
    pub fallbacks: usize,
}

/// One line of the diagnostics trace.
#[derive(Debug, Clone, Serialize)]
struct TraceLine<'a> {
    slot: usize,
    row: usize,
    method: &'a str,
    #[serde(flatten)]
    diag: &'a Diagnostics,
}

/// Either kind of error memory.
#[derive(Debug, Clone)]
pub enum MemoryStore {
    Sketch(ErrorSketch),
    Oracle(OracleMemory),
}

impl MemoryStore {
    pub fn build(config: &ExperimentConfig, dim: usize) -> Result<Self> {
        let m = &config.memory;
        Ok(match m.kind {
            MemoryKind::Sketch => MemoryStore::Sketch(
                ErrorSketch::from_params(m.bank_params(dim))?.with_readout(m.readout),
            ),
            MemoryKind::Oracle => MemoryStore::Oracle(
                OracleMemory::new(dim, m.oracle_capacity, m.oracle_k())?
                    .with_down_sampling(m.keep_probability, m.seed)?,
            ),
        })
    }

    pub fn as_sketch(&self) -> Option<&ErrorSketch> {
        match self {
            MemoryStore::Sketch(s) => Some(s),
            MemoryStore::Oracle(_) => None,
        }
    }
}

impl ErrorMemory for MemoryStore {
    fn dim(&self) -> usize {
        match self {
            MemoryStore::Sketch(s) => s.dim(),
            MemoryStore::Oracle(o) => o.dim(),
        }
    }

    fn write(&mut self, record: &MemoryRecord, sigma: Option<f64>) -> Result<bool> {
        match self {
            MemoryStore::Sketch(s) => s.write(record, sigma),
            MemoryStore::Oracle(o) => o.store(record, sigma),
        }
    }

    fn retrieve(&self, query: &[f64]) -> Result<Neighborhood> {
        match self {
            MemoryStore::Sketch(s) => s.retrieve(query),
            MemoryStore::Oracle(o) => o.retrieve(query),
        }
    }

    fn reset(&mut self) {
        match self {
            MemoryStore::Sketch(s) => ErrorMemory::reset(s),
            MemoryStore::Oracle(o) => ErrorMemory::reset(o),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunResults {
    /// Slot-major, methods in configured order within a slot.
    pub metrics: Vec<SlotMetrics>,
    pub events: Vec<PhaseEvent>,
    pub methods: Vec<Method>,
    /// Final memory of each compensating method.
    pub memories: BTreeMap<Method, MemoryStore>,
}

impl RunResults {
    pub fn for_method(&self, method: Method) -> Vec<&SlotMetrics> {
        self.metrics.iter().filter(|m| m.method == method).collect()
    }

    /// Mean of the finite per-slot values of `metric` over slots in `slots`.
    pub fn mean<F>(&self, method: Method, slots: std::ops::Range<usize>, metric: F) -> f64
    where
        F: Fn(&SlotMetrics) -> f64,
    {
        let values: Vec<f64> = self
            .metrics
            .iter()
            .filter(|m| m.method == method && slots.contains(&m.slot))
            .map(metric)
            .filter(|v| v.is_finite())
            .collect();
        values.iter().sum::<f64>() / values.len() as f64
    }

    /// `slot,method,auc,gauc,logloss,rows` per slot, then one `mean` row per
    /// method averaging its slots.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["slot", "method", "auc", "gauc", "logloss", "rows"])?;
        for m in &self.metrics {
            w.write_record([
                m.slot.to_string(),
                m.method.to_string(),
                m.auc.to_string(),
                m.gauc.to_string(),
                m.logloss.to_string(),
                m.rows.to_string(),
            ])?;
        }
        let n_slots = self.metrics.iter().map(|m| m.slot + 1).max().unwrap_or(0);
        for &method in &self.methods {
            let rows: usize = self.for_method(method).iter().map(|m| m.rows).sum();
            w.write_record([
                "mean".to_string(),
                method.to_string(),
                self.mean(method, 0..n_slots, |m| m.auc).to_string(),
                self.mean(method, 0..n_slots, |m| m.gauc).to_string(),
                self.mean(method, 0..n_slots, |m| m.logloss).to_string(),
                rows.to_string(),
            ])?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::io("<results csv>", e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Trains the base model and streams every slot. Writes the configured outputs.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunResults> {
    let prepared = train(config)?;
    let results = run_and_write(&prepared, config)?;
    Ok(results)
}

/// Streams `prepared` and writes the outputs named in `[output]`.
pub fn run_and_write(prepared: &Prepared, config: &ExperimentConfig) -> Result<RunResults> {
    let results = match &config.output.trace {
        Some(path) => {
            let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
            let mut out = std::io::BufWriter::new(file);
            let r = run_stream(prepared, config, Some(&mut out))?;
            out.flush().map_err(|e| Error::io(path, e))?;
            r
        }
        None => run_stream(prepared, config, None)?,
    };
    if let Some(path) = &config.output.results {
        write_text(path, &results.to_csv()?)?;
    }
    if let Some(path) = &config.output.snapshot {
        let sketch = results
            .memories
            .values()
            .find_map(MemoryStore::as_sketch)
            .ok_or_else(|| {
                Error::Config("[output] snapshot needs a compensating method with a sketch".into())
            })?;
        fs::write(path, sketch.snapshot()).map_err(|e| Error::io(path, e))?;
    }
    Ok(results)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Labels of a slot, readable only after its predictions are final.
struct LabelGate<'a> {
    slot: &'a Slot,
    open: bool,
}

impl LabelGate<'_> {
    fn labels(&self) -> Result<Vec<u8>> {
        if !self.open {
            return Err(Error::Config(format!(
                "labels of slot {} read before its predictions were final",
                self.slot.index
            )));
        }
        Ok(self.slot.rows.iter().map(|r| r.label).collect())
    }
}

struct Lane {
    method: Method,
    memory: Option<MemoryStore>,
}

/// Streams the slots of `prepared` through every configured method. The base
/// model of `prepared` is never modified; incremental methods work on a copy.
pub fn run_stream(
    prepared: &Prepared,
    config: &ExperimentConfig,
    mut trace: Option<&mut dyn Write>,
) -> Result<RunResults> {
    config.validate()?;
    let comp: CompensationConfig = config.compensation();
    let methods = config.methods.run.clone();
    let frozen = &prepared.model;
    let mut incremental = prepared.model.clone();
    let inc_lr = config
        .methods
        .incremental_learning_rate
        .unwrap_or(config.model.learning_rate);
    let inc_batch = config
        .methods
        .incremental_batch_size
        .unwrap_or(config.model.batch_size);
    let any_incremental = methods.iter().any(|m| m.updates_model());
    let any_frozen = methods.iter().any(|m| !m.updates_model());
    let dim = prepared.model.hidden_dim();

    let mut lanes = methods
        .iter()
        .map(|&method| {
            Ok(Lane {
                method,
                memory: if method.compensates() {
                    Some(MemoryStore::build(config, dim)?)
                } else {
                    None
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let user_pos = prepared.schema.feature_position(FieldKind::UserId);
    let mut events = Vec::new();
    let mut all_metrics = Vec::new();

    for slot in &prepared.slots {
        let t = slot.index;
        let ctx = |e: Error| e.in_slot(t);
        let mut gate = LabelGate { slot, open: false };

        // Predict: features only.
        events.push(PhaseEvent {
            slot: t,
            phase: Phase::Predict,
        });
        let encoded: Vec<EncodedRow> = prepared.schema.encode_all(&slot.rows).map_err(ctx)?;
        let score = |model: &BaseModel| -> Result<Vec<Forward>> {
            encoded
                .iter()
                .map(|r| model.embed(&r.indices).and_then(|e| model.forward(&e)))
                .collect()
        };
        let frozen_out = if any_frozen {
            score(frozen).map_err(ctx)?
        } else {
            Vec::new()
        };
        let inc_out = if any_incremental {
            score(&incremental).map_err(ctx)?
        } else {
            Vec::new()
        };

        let mut lane_preds: Vec<(Vec<f64>, usize)> = Vec::with_capacity(lanes.len());
        for lane in &lanes {
            let base = if lane.method.updates_model() {
                &inc_out
            } else {
                &frozen_out
            };
            match &lane.memory {
                None => lane_preds.push((base.iter().map(|f| f.y_base).collect(), 0)),
                Some(memory) => {
                    let mut preds = Vec::with_capacity(base.len());
                    let mut fallbacks = 0;
                    for (row, f) in base.iter().enumerate() {
                        let d = compensator::predict(f.y_base, &f.hidden, memory, &comp)
                            .map_err(ctx)?;
                        fallbacks += usize::from(d.fallback);
                        if let Some(out) = trace.as_deref_mut() {
                            let line = TraceLine {
                                slot: t,
                                row,
                                method: lane.method.name(),
                                diag: &d,
                            };
                            serde_json::to_writer(&mut *out, &line)?;
                            out.write_all(b"\n").map_err(|e| Error::io("<trace>", e))?;
                        }
                        preds.push(d.y_pred);
                    }
                    lane_preds.push((preds, fallbacks));
                }
            }
        }

        // Reveal.
        gate.open = true;
        events.push(PhaseEvent {
            slot: t,
            phase: Phase::Reveal,
        });
        let labels = gate.labels()?;

        events.push(PhaseEvent {
            slot: t,
            phase: Phase::Evaluate,
        });
        let users: Vec<String> = slot
            .rows
            .iter()
            .map(|r| match user_pos.map(|p| &r.features[p]) {
                Some(Value::Token(u)) => u.clone(),
                Some(Value::Number(v)) => v.to_string(),
                None => String::new(),
            })
            .collect();
        for (lane, (preds, fallbacks)) in lanes.iter().zip(&lane_preds) {
            all_metrics.push(evaluate(
                t,
                lane.method,
                preds,
                &labels,
                &users,
                *fallbacks,
            )?);
        }

        // Write, with base predictions from before this slot's model update.
        events.push(PhaseEvent {
            slot: t,
            phase: Phase::Write,
        });
        for lane in &mut lanes {
            let Some(memory) = lane.memory.as_mut() else {
                continue;
            };
            let due = refresh_due(config.memory.refresh, t, lane.method);
            if due && config.memory.refresh_keeps_latest {
                memory.reset();
            }
            let base = if lane.method.updates_model() {
                &inc_out
            } else {
                &frozen_out
            };
            for (f, &y) in base.iter().zip(&labels) {
                let record = MemoryRecord::new(f.hidden.clone(), y, f.y_base).map_err(ctx)?;
                memory.write(&record, config.memory.sigma).map_err(ctx)?;
            }
        }

        if any_incremental {
            events.push(PhaseEvent {
                slot: t,
                phase: Phase::Update,
            });
            if let Some(loss) = incremental
                .incremental_update(&encoded, inc_lr, inc_batch)
                .map_err(ctx)?
            {
                if !loss.is_finite() {
                    return Err(ctx(Error::NonFinite(format!("incremental loss {loss}"))));
                }
                log::debug!("slot {t}: incremental loss {loss}");
            }
        }

        events.push(PhaseEvent {
            slot: t,
            phase: Phase::Refresh,
        });
        if !config.memory.refresh_keeps_latest {
            for lane in &mut lanes {
                if let Some(memory) = lane.memory.as_mut() {
                    if refresh_due(config.memory.refresh, t, lane.method) {
                        memory.reset();
                    }
                }
            }
        }
    }

    let memories = lanes
        .into_iter()
        .filter_map(|l| l.memory.map(|m| (l.method, m)))
        .collect();
    Ok(RunResults {
        metrics: all_metrics,
        events,
        methods,
        memories,
    })
}

fn refresh_due(policy: Refresh, slot: usize, method: Method) -> bool {
    match policy {
        Refresh::Never => false,
        Refresh::EveryNSlots(n) => (slot + 1).is_multiple_of(n),
        Refresh::OnModelUpdate => method.updates_model(),
    }
}

fn evaluate(
    slot: usize,
    method: Method,
    preds: &[f64],
    labels: &[u8],
    users: &[String],
    fallbacks: usize,
) -> Result<SlotMetrics> {
    let ranked = |r: Result<f64>| match r {
        Ok(v) => Ok(v),
        Err(Error::DegenerateLabels(why)) => {
            log::warn!("slot {slot} {method}: {why}");
            Ok(f64::NAN)
        }
        Err(e) => Err(e.in_slot(slot)),
    };
    Ok(SlotMetrics {
        slot,
        method,
        rows: preds.len(),
        auc: ranked(metrics::auc(preds, labels))?,
        gauc: ranked(metrics::gauc(preds, labels, users))?,
        logloss: metrics::log_loss(preds, labels).map_err(|e| e.in_slot(slot))?,
        fallbacks,
    })
}
