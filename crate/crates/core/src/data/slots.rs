use std::collections::{BTreeMap, HashSet};
use std::io::Write;

use super::schema::{FeatureSchema, FieldKind, Row, Value};
use crate::error::{Error, Result};

/// One chronological partition of the test stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Slot {
    pub index: usize,
    pub rows: Vec<Row>,
    /// First and last timestamp in the slot.
    pub time_range: (i64, i64),
}

/// Splits `rows` evenly, in order, into `n_slots` slots; the remainder goes to
/// the last slot.
pub fn make_slots(rows: Vec<Row>, n_slots: usize) -> Result<Vec<Slot>> {
    if n_slots == 0 {
        return Err(Error::InvalidParameter("n_slots must be >= 1".into()));
    }
    if rows.len() < n_slots {
        return Err(Error::InvalidParameter(format!(
            "{} rows cannot fill {n_slots} slots",
            rows.len()
        )));
    }
    if rows.windows(2).any(|w| w[1].timestamp < w[0].timestamp) {
        return Err(Error::InvalidParameter(
            "rows are not in chronological order".into(),
        ));
    }
    let size = rows.len() / n_slots;
    let mut rest = rows.into_iter();
    let mut slots = Vec::with_capacity(n_slots);
    for index in 0..n_slots {
        let take = if index + 1 == n_slots {
            usize::MAX
        } else {
            size
        };
        let chunk: Vec<Row> = rest.by_ref().take(take).collect();
        let time_range = (chunk[0].timestamp, chunk[chunk.len() - 1].timestamp);
        slots.push(Slot {
            index,
            rows: chunk,
            time_range,
        });
    }
    Ok(slots)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotDiagnostics {
    pub slot: usize,
    /// Mean squared distance of the slot's embeddings to their centroid.
    pub variance: f64,
    pub n_users: usize,
    pub n_items: usize,
    pub ctr: f64,
    /// Mean CTR per value of the first categorical field, sorted by value.
    pub category_ctr: Vec<(String, f64)>,
}

/// Per-slot shift diagnostics. `embed` maps a row to its embedding vector.
pub fn drift_report<F>(
    slots: &[Slot],
    schema: &FeatureSchema,
    embed: F,
) -> Result<Vec<SlotDiagnostics>>
where
    F: Fn(&Row) -> Result<Vec<f64>>,
{
    if slots.is_empty() {
        return Err(Error::EmptyInput("slots"));
    }
    let user_pos = schema.feature_position(FieldKind::UserId);
    let item_pos = schema.feature_position(FieldKind::ItemId);
    let cat_pos = schema.feature_position(FieldKind::Categorical);
    let token = |row: &Row, pos: Option<usize>| -> Option<String> {
        pos.map(|p| match &row.features[p] {
            Value::Token(t) => t.clone(),
            Value::Number(v) => v.to_string(),
        })
    };

    let mut out = Vec::with_capacity(slots.len());
    for slot in slots {
        let n = slot.rows.len();
        let embeddings = slot.rows.iter().map(&embed).collect::<Result<Vec<_>>>()?;
        let variance = if n == 0 {
            0.0
        } else {
            let dim = embeddings[0].len();
            let mut centroid = vec![0.0; dim];
            for e in &embeddings {
                for (c, v) in centroid.iter_mut().zip(e) {
                    *c += v;
                }
            }
            centroid.iter_mut().for_each(|c| *c /= n as f64);
            embeddings
                .iter()
                .map(|e| {
                    e.iter()
                        .zip(&centroid)
                        .map(|(a, b)| (a - b).powi(2))
                        .sum::<f64>()
                })
                .sum::<f64>()
                / n as f64
        };
        let users: HashSet<_> = slot
            .rows
            .iter()
            .filter_map(|r| token(r, user_pos))
            .collect();
        let items: HashSet<_> = slot
            .rows
            .iter()
            .filter_map(|r| token(r, item_pos))
            .collect();
        let clicks: usize = slot.rows.iter().map(|r| r.label as usize).sum();
        let mut per_cat: BTreeMap<String, (usize, usize)> = BTreeMap::new();
        for r in &slot.rows {
            if let Some(c) = token(r, cat_pos) {
                let e = per_cat.entry(c).or_default();
                e.0 += r.label as usize;
                e.1 += 1;
            }
        }
        out.push(SlotDiagnostics {
            slot: slot.index,
            variance,
            n_users: users.len(),
            n_items: items.len(),
            ctr: if n == 0 {
                0.0
            } else {
                clicks as f64 / n as f64
            },
            category_ctr: per_cat
                .into_iter()
                .map(|(c, (k, m))| (c, k as f64 / m as f64))
                .collect(),
        });
    }
    Ok(out)
}

/// Writes diagnostics as CSV with columns
/// `slot,variance,n_users,n_items,ctr,category,category_ctr`, one line per
/// (slot, category) pair.
pub fn write_drift_csv<W: Write>(out: W, report: &[SlotDiagnostics]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "slot",
        "variance",
        "n_users",
        "n_items",
        "ctr",
        "category",
        "category_ctr",
    ])?;
    for d in report {
        let base = [
            d.slot.to_string(),
            d.variance.to_string(),
            d.n_users.to_string(),
            d.n_items.to_string(),
            d.ctr.to_string(),
        ];
        if d.category_ctr.is_empty() {
            w.write_record(base.iter().map(String::as_str).chain(["", ""]))?;
        }
        for (cat, ctr) in &d.category_ctr {
            let ctr = ctr.to_string();
            w.write_record(
                base.iter()
                    .map(String::as_str)
                    .chain([cat.as_str(), ctr.as_str()]),
            )?;
        }
    }
    w.flush().map_err(|e| Error::io("<drift csv>", e))?;
    Ok(())
}
