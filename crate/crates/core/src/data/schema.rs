use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Categorical,
    Numerical,
    Label,
    UserId,
    ItemId,
    Timestamp,
}

impl FieldKind {
    /// Fields that get an embedding table.
    pub fn is_feature(self) -> bool {
        matches!(
            self,
            FieldKind::Categorical | FieldKind::Numerical | FieldKind::UserId | FieldKind::ItemId
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub kind: FieldKind,
}

impl FieldSpec {
    pub fn new(name: impl Into<String>, kind: FieldKind) -> Self {
        Self {
            name: name.into(),
            kind,
        }
    }
}

/// One raw feature value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Value {
    Token(String),
    Number(f64),
}

/// A raw row. `features` holds one value per feature field, in schema order.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub features: Vec<Value>,
    pub label: u8,
    pub timestamp: i64,
    /// Ground-truth click probability, known only for synthetic data.
    pub truth: Option<f64>,
}

/// Token vocabulary of a categorical-like field. Index 0 is reserved for
/// out-of-vocabulary tokens; known tokens get 1.. in order of first appearance.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32 + 1))
            .collect();
        Self { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    fn insert(&mut self, token: &str) {
        if !self.index.contains_key(token) {
            self.tokens.push(token.to_owned());
            self.index
                .insert(token.to_owned(), self.tokens.len() as u32);
        }
    }

    pub fn lookup(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(0)
    }

    /// Number of known tokens (excluding the OOV slot).
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Per-feature encoding learned from training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    Vocab(Vocab),
    /// Strictly increasing bucket boundaries; a value falls in the bucket equal
    /// to the number of boundaries it is `>=` to.
    Buckets(Vec<f64>),
}

impl Encoding {
    pub fn table_size(&self) -> usize {
        match self {
            Encoding::Vocab(v) => v.len() + 1,
            Encoding::Buckets(b) => b.len() + 1,
        }
    }
}

/// Declared fields plus, once fitted, the per-feature encodings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub fields: Vec<FieldSpec>,
    #[serde(default)]
    pub encodings: Vec<Encoding>,
}

/// Encoded row: one table index per feature field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedRow {
    pub indices: Vec<u32>,
    pub label: u8,
}

impl FeatureSchema {
    pub fn new(fields: Vec<FieldSpec>) -> Result<Self> {
        let labels = fields.iter().filter(|f| f.kind == FieldKind::Label).count();
        if labels != 1 {
            return Err(Error::Schema(format!(
                "exactly one label field required, found {labels}"
            )));
        }
        for kind in [FieldKind::UserId, FieldKind::ItemId, FieldKind::Timestamp] {
            if fields.iter().filter(|f| f.kind == kind).count() > 1 {
                return Err(Error::Schema(format!("at most one {kind:?} field allowed")));
            }
        }
        if !fields.iter().any(|f| f.kind.is_feature()) {
            return Err(Error::Schema("no feature fields".into()));
        }
        let mut names: Vec<&str> = fields.iter().map(|f| f.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Schema("duplicate field names".into()));
        }
        Ok(Self {
            fields,
            encodings: Vec::new(),
        })
    }

    /// Feature fields in order.
    pub fn feature_fields(&self) -> impl Iterator<Item = &FieldSpec> {
        self.fields.iter().filter(|f| f.kind.is_feature())
    }

    pub fn num_features(&self) -> usize {
        self.feature_fields().count()
    }

    /// Position within `Row::features` of the first feature field of `kind`.
    pub fn feature_position(&self, kind: FieldKind) -> Option<usize> {
        self.feature_fields().position(|f| f.kind == kind)
    }

    pub fn is_fitted(&self) -> bool {
        self.encodings.len() == self.num_features()
    }

    /// Builds vocabularies and quantile bucket boundaries from training rows.
    pub fn fit(&mut self, rows: &[Row], num_buckets: usize) -> Result<()> {
        if num_buckets == 0 {
            return Err(Error::InvalidParameter("num_buckets must be >= 1".into()));
        }
        let kinds: Vec<FieldKind> = self.feature_fields().map(|f| f.kind).collect();
        let mut encodings = Vec::with_capacity(kinds.len());
        for (pos, kind) in kinds.into_iter().enumerate() {
            if kind == FieldKind::Numerical {
                let mut values: Vec<f64> = rows
                    .iter()
                    .filter_map(|r| match &r.features[pos] {
                        Value::Number(v) if v.is_finite() => Some(*v),
                        _ => None,
                    })
                    .collect();
                encodings.push(Encoding::Buckets(quantile_boundaries(
                    &mut values,
                    num_buckets,
                )));
            } else {
                let mut vocab = Vocab::default();
                for r in rows {
                    if let Value::Token(t) = &r.features[pos] {
                        vocab.insert(t);
                    }
                }
                encodings.push(Encoding::Vocab(vocab));
            }
        }
        self.encodings = encodings;
        Ok(())
    }

    pub fn table_sizes(&self) -> Vec<usize> {
        self.encodings.iter().map(Encoding::table_size).collect()
    }

    pub fn encode(&self, row: &Row) -> Result<EncodedRow> {
        if !self.is_fitted() {
            return Err(Error::Schema("schema is not fitted".into()));
        }
        if row.features.len() != self.encodings.len() {
            return Err(Error::Schema(format!(
                "row has {} features, schema expects {}",
                row.features.len(),
                self.encodings.len()
            )));
        }
        let indices = row
            .features
            .iter()
            .zip(&self.encodings)
            .map(|(v, enc)| match (v, enc) {
                (Value::Token(t), Encoding::Vocab(vocab)) => Ok(vocab.lookup(t)),
                (Value::Number(x), Encoding::Buckets(b)) => Ok(bucketize(b, *x)),
                _ => Err(Error::Schema("value type does not match field kind".into())),
            })
            .collect::<Result<Vec<u32>>>()?;
        Ok(EncodedRow {
            indices,
            label: row.label,
        })
    }

    pub fn encode_all(&self, rows: &[Row]) -> Result<Vec<EncodedRow>> {
        rows.iter().map(|r| self.encode(r)).collect()
    }
}

pub fn bucketize(boundaries: &[f64], value: f64) -> u32 {
    boundaries.partition_point(|&b| b <= value) as u32
}

fn quantile_boundaries(values: &mut [f64], num_buckets: usize) -> Vec<f64> {
    if values.is_empty() || num_buckets < 2 {
        return Vec::new();
    }
    values.sort_unstable_by(f64::total_cmp);
    let mut out: Vec<f64> = Vec::with_capacity(num_buckets - 1);
    for q in 1..num_buckets {
        let v = values[q * values.len() / num_buckets];
        if out.last().is_none_or(|&last| v > last) {
            out.push(v);
        }
    }
    out
}
