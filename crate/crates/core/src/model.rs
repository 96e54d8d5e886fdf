//! The base click model: per-field embeddings, concatenated, through rectifier
//! layers into a sigmoid output, trained with minibatch SGD on binary
//! cross-entropy. Gradients are computed by hand.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{EncodedRow, FeatureSchema, Row};
use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embedding_dim: usize,
    pub hidden_sizes: Vec<usize>,
    /// Hidden layer whose activations key the error memory; `None` is the last.
    pub hidden_layer: Option<usize>,
    /// Embeddings start uniform in `[-init_scale, init_scale]`; dense layers
    /// use He-uniform weights and zero biases.
    pub init_scale: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Quantile buckets per numerical field.
    pub num_buckets: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 8,
            hidden_sizes: vec![64, 32],
            hidden_layer: None,
            init_scale: 0.05,
            learning_rate: 0.05,
            batch_size: 64,
            epochs: 3,
            num_buckets: 16,
            seed: 17,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 {
            return Err(Error::InvalidParameter("embedding_dim must be >= 1".into()));
        }
        if self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) {
            return Err(Error::InvalidParameter(
                "hidden_sizes must be a non-empty list of positive widths".into(),
            ));
        }
        if let Some(l) = self.hidden_layer {
            if l >= self.hidden_sizes.len() {
                return Err(Error::InvalidParameter(format!(
                    "hidden_layer {l} out of range for {} layers",
                    self.hidden_sizes.len()
                )));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter("learning_rate must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Dense {
    inputs: usize,
    outputs: usize,
    /// `outputs x inputs`, row-major.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Dense {
    /// He-uniform weights, zero bias.
    fn init(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / inputs as f64).sqrt();
        Self {
            inputs,
            outputs,
            weights: (0..inputs * outputs).map(|_| uniform(rng, limit)).collect(),
            bias: vec![0.0; outputs],
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            inputs: self.inputs,
            outputs: self.outputs,
            weights: vec![0.0; self.weights.len()],
            bias: vec![0.0; self.bias.len()],
        }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.weights
                .chunks_exact(self.inputs)
                .zip(&self.bias)
                .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()),
        );
    }
}

fn uniform(rng: &mut ChaCha8Rng, scale: f64) -> f64 {
    if scale == 0.0 {
        0.0
    } else {
        rng.random_range(-scale..=scale)
    }
}

/// Output of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub y_base: f64,
    pub hidden: Vec<f64>,
}

struct Trace {
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    act: Vec<Vec<f64>>,
    logit: f64,
}

/// Gradients of the mean batch loss. Embedding rows are sparse.
#[derive(Debug, Clone)]
pub struct Gradients {
    embeddings: BTreeMap<(usize, u32), Vec<f64>>,
    layers: Vec<Dense>,
    output: Dense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseModel {
    embedding_dim: usize,
    table_sizes: Vec<usize>,
    /// One `rows x embedding_dim` table per feature field; row 0 is the OOV row.
    embeddings: Vec<Vec<f64>>,
    layers: Vec<Dense>,
    output: Dense,
    hidden_layer: usize,
    steps: u64,
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `-(y ln p + (1-y) ln(1-p))` with `p = sigmoid(logit)`, computed stably.
fn bce_from_logit(logit: f64, label: u8) -> f64 {
    let softplus = logit.max(0.0) + (-logit.abs()).exp().ln_1p();
    softplus - f64::from(label) * logit
}

impl BaseModel {
    pub fn new(table_sizes: &[usize], config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        if table_sizes.is_empty() || table_sizes.contains(&0) {
            return Err(Error::InvalidParameter(
                "every feature needs a non-empty embedding table".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.embedding_dim;
        let s = config.init_scale;
        let embeddings = table_sizes
            .iter()
            .map(|&n| (0..n * d).map(|_| uniform(&mut rng, s)).collect())
            .collect();
        let mut layers = Vec::with_capacity(config.hidden_sizes.len());
        let mut width = table_sizes.len() * d;
        for &h in &config.hidden_sizes {
            layers.push(Dense::init(width, h, &mut rng));
            width = h;
        }
        let output = Dense::init(width, 1, &mut rng);
        Ok(Self {
            embedding_dim: d,
            table_sizes: table_sizes.to_vec(),
            embeddings,
            layers,
            output,
            hidden_layer: config.hidden_layer.unwrap_or(config.hidden_sizes.len() - 1),
            steps: 0,
        })
    }

    /// Builds a model sized for a fitted schema.
    pub fn for_schema(schema: &FeatureSchema, config: &ModelConfig) -> Result<Self> {
        if !schema.is_fitted() {
            return Err(Error::Schema("schema is not fitted".into()));
        }
        Self::new(&schema.table_sizes(), config)
    }

    pub fn input_dim(&self) -> usize {
        self.table_sizes.len() * self.embedding_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.layers[self.hidden_layer].outputs
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Concatenated embeddings for one encoded row.
    pub fn embed(&self, indices: &[u32]) -> Result<Vec<f64>> {
        check_dim(self.table_sizes.len(), indices.len())?;
        let d = self.embedding_dim;
        let mut e = Vec::with_capacity(self.input_dim());
        for (field, &i) in indices.iter().enumerate() {
            let i = i as usize;
            if i >= self.table_sizes[field] {
                return Err(Error::Schema(format!(
                    "index {i} outside table {field} of size {}",
                    self.table_sizes[field]
                )));
            }
            e.extend_from_slice(&self.embeddings[field][i * d..(i + 1) * d]);
        }
        Ok(e)
    }

    fn trace(&self, input: Vec<f64>) -> Trace {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut act: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let x = act.last().unwrap_or(&input);
            let mut z = Vec::with_capacity(layer.outputs);
            layer.apply(x, &mut z);
            let a = z.iter().map(|v| v.max(0.0)).collect();
            pre.push(z);
            act.push(a);
        }
        let mut out = Vec::with_capacity(1);
        self.output
            .apply(act.last().expect("at least one hidden layer"), &mut out);
        Trace {
            input,
            pre,
            act,
            logit: out[0],
        }
    }

    /// `y_base` and the key-layer activations for an embedding vector.
    pub fn forward(&self, e: &[f64]) -> Result<Forward> {
        check_dim(self.input_dim(), e.len())?;
        let t = self.trace(e.to_vec());
        Ok(self.finish(t))
    }

    pub fn forward_encoded(&self, row: &EncodedRow) -> Result<Forward> {
        let e = self.embed(&row.indices)?;
        Ok(self.finish(self.trace(e)))
    }

    fn finish(&self, mut t: Trace) -> Forward {
        // keep the output strictly inside (0, 1) even when the logit saturates
        let y_base = sigmoid(t.logit).clamp(f64::EPSILON, 1.0 - f64::EPSILON);
        Forward {
            y_base,
            hidden: std::mem::take(&mut t.act[self.hidden_layer]),
        }
    }

    /// Mean loss over `batch` and its gradient.
    pub fn loss_and_gradients(&self, batch: &[EncodedRow]) -> Result<(f64, Gradients)> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("batch"));
        }
        let n = batch.len() as f64;
        let d = self.embedding_dim;
        let mut g = Gradients {
            embeddings: BTreeMap::new(),
            layers: self.layers.iter().map(Dense::zeros_like).collect(),
            output: self.output.zeros_like(),
        };
        let mut loss = 0.0;
        for row in batch {
            let t = self.trace(self.embed(&row.indices)?);
            loss += bce_from_logit(t.logit, row.label);
            let dlogit = (sigmoid(t.logit) - f64::from(row.label)) / n;

            let last = t.act.last().expect("hidden layer");
            for (gw, a) in g.output.weights.iter_mut().zip(last) {
                *gw += dlogit * a;
            }
            g.output.bias[0] += dlogit;

            let mut delta: Vec<f64> = self
                .output
                .weights
                .iter()
                .zip(t.pre.last().expect("hidden layer"))
                .map(|(w, z)| if *z > 0.0 { w * dlogit } else { 0.0 })
                .collect();
            for l in (0..self.layers.len()).rev() {
                let layer = &self.layers[l];
                let x = if l == 0 { &t.input } else { &t.act[l - 1] };
                let gl = &mut g.layers[l];
                for (o, &dl) in delta.iter().enumerate() {
                    if dl == 0.0 {
                        continue;
                    }
                    gl.bias[o] += dl;
                    let row = &mut gl.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (gw, xv) in row.iter_mut().zip(x) {
                        *gw += dl * xv;
                    }
                }
                let mut back = vec![0.0; layer.inputs];
                for (o, &dl) in delta.iter().enumerate() {
                    if dl == 0.0 {
                        continue;
                    }
                    let w = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (b, wv) in back.iter_mut().zip(w) {
                        *b += dl * wv;
                    }
                }
                if l > 0 {
                    for (b, z) in back.iter_mut().zip(&t.pre[l - 1]) {
                        if *z <= 0.0 {
                            *b = 0.0;
                        }
                    }
                }
                delta = back;
            }
            for (field, &idx) in row.indices.iter().enumerate() {
                let slot = g
                    .embeddings
                    .entry((field, idx))
                    .or_insert_with(|| vec![0.0; d]);
                for (s, v) in slot.iter_mut().zip(&delta[field * d..(field + 1) * d]) {
                    *s += v;
                }
            }
        }
        Ok((loss / n, g))
    }

    fn apply(&mut self, g: &Gradients, lr: f64) {
        let d = self.embedding_dim;
        for (&(field, idx), grad) in &g.embeddings {
            let start = idx as usize * d;
            for (w, gv) in self.embeddings[field][start..start + d]
                .iter_mut()
                .zip(grad)
            {
                *w -= lr * gv;
            }
        }
        for (layer, gl) in self.layers.iter_mut().zip(&g.layers) {
            for (w, gv) in layer.weights.iter_mut().zip(&gl.weights) {
                *w -= lr * gv;
            }
            for (b, gv) in layer.bias.iter_mut().zip(&gl.bias) {
                *b -= lr * gv;
            }
        }
        for (w, gv) in self.output.weights.iter_mut().zip(&g.output.weights) {
            *w -= lr * gv;
        }
        self.output.bias[0] -= lr * g.output.bias[0];
        self.steps += 1;
    }

    fn sgd_step(&mut self, batch: &[EncodedRow], lr: f64) -> Result<f64> {
        let (loss, g) = self.loss_and_gradients(batch)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "batch loss {loss} at step {} (batch of {}, lr {lr})",
                self.steps,
                batch.len()
            )));
        }
        self.apply(&g, lr);
        Ok(loss)
    }

    /// One shuffled pass of minibatch SGD. Returns the mean loss of the epoch.
    pub fn train_epoch(
        &mut self,
        rows: &[EncodedRow],
        lr: f64,
        batch_size: usize,
        seed: u64,
    ) -> Result<f64> {
        if rows.is_empty() {
            return Err(Error::EmptyInput("training rows"));
        }
        if batch_size == 0 {
            return Err(Error::InvalidParameter("batch_size must be >= 1".into()));
        }
        let mut order: Vec<usize> = (0..rows.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut total = 0.0;
        let mut batch = Vec::with_capacity(batch_size);
        for chunk in order.chunks(batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| rows[i].clone()));
            total += self.sgd_step(&batch, lr)? * batch.len() as f64;
        }
        Ok(total / rows.len() as f64)
    }

    /// Runs `config.epochs` epochs; epoch `i` shuffles with `config.seed + i`.
    pub fn fit(&mut self, rows: &[EncodedRow], config: &ModelConfig) -> Result<Vec<f64>> {
        (0..config.epochs)
            .map(|i| {
                self.train_epoch(
                    rows,
                    config.learning_rate,
                    config.batch_size,
                    config.seed.wrapping_add(i as u64),
                )
            })
            .collect()
    }

    /// A single in-order pass over newly observed rows, continuing from the
    /// current weights. `None` when there is nothing to learn from.
    pub fn incremental_update(
        &mut self,
        rows: &[EncodedRow],
        lr: f64,
        batch_size: usize,
    ) -> Result<Option<f64>> {
        if rows.is_empty() {
            return Ok(None);
        }
        if batch_size == 0 {
            return Err(Error::InvalidParameter("batch_size must be >= 1".into()));
        }
        let mut total = 0.0;
        for batch in rows.chunks(batch_size) {
            total += self.sgd_step(batch, lr)? * batch.len() as f64;
        }
        Ok(Some(total / rows.len() as f64))
    }

    /// Mean loss without updating anything.
    pub fn mean_loss(&self, rows: &[EncodedRow]) -> Result<f64> {
        Ok(self.loss_and_gradients(rows)?.0)
    }

    /// All parameters in a fixed order: embedding tables, hidden layers
    /// (weights then bias), output layer.
    pub fn parameters(&self) -> Vec<f64> {
        let mut p: Vec<f64> = self.embeddings.concat();
        for l in self.layers.iter().chain(std::iter::once(&self.output)) {
            p.extend_from_slice(&l.weights);
            p.extend_from_slice(&l.bias);
        }
        p
    }

    pub fn set_parameters(&mut self, values: &[f64]) -> Result<()> {
        check_dim(self.num_parameters(), values.len())?;
        let mut rest = values;
        let mut take = |dst: &mut [f64]| {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        };
        for t in &mut self.embeddings {
            take(t);
        }
        for l in self
            .layers
            .iter_mut()
            .chain(std::iter::once(&mut self.output))
        {
            take(&mut l.weights);
            take(&mut l.bias);
        }
        Ok(())
    }

    pub fn num_parameters(&self) -> usize {
        self.embeddings.iter().map(Vec::len).sum::<usize>()
            + self
                .layers
                .iter()
                .chain(std::iter::once(&self.output))
                .map(|l| l.weights.len() + l.bias.len())
                .sum::<usize>()
    }

    /// Flattens gradients into the order of [`BaseModel::parameters`].
    pub fn flatten_gradients(&self, g: &Gradients) -> Vec<f64> {
        let d = self.embedding_dim;
        let mut flat = Vec::with_capacity(self.num_parameters());
        for (field, table) in self.embeddings.iter().enumerate() {
            let start = flat.len();
            flat.resize(start + table.len(), 0.0);
            for (&(f, idx), grad) in g.embeddings.range((field, 0)..=(field, u32::MAX)) {
                debug_assert_eq!(f, field);
                let at = start + idx as usize * d;
                flat[at..at + d].copy_from_slice(grad);
            }
        }
        for l in g.layers.iter().chain(std::iter::once(&g.output)) {
            flat.extend_from_slice(&l.weights);
            flat.extend_from_slice(&l.bias);
        }
        flat
    }
}

/// Encodes and embeds a raw row.
pub fn embed(schema: &FeatureSchema, model: &BaseModel, row: &Row) -> Result<Vec<f64>> {
    model.embed(&schema.encode(row)?.indices)
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to reproduce a trained model's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub schema: FeatureSchema,
    pub config: ModelConfig,
    pub model: BaseModel,
}

impl Checkpoint {
    pub fn new(schema: FeatureSchema, config: ModelConfig, model: BaseModel) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            schema,
            config,
            model,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint version {}",
                ck.version
            )));
        }
        Ok(ck)
    }
}
