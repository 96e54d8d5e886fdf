//! Synthetic click streams with controllable drift.
//!
//! Rows carry a user, an item, the item's category and two Gaussian numeric
//! features. The true click probability is
//! `sigmoid(bias + user_bias + item_bias + effect[user_type][category] + beta . x)`
//! and labels are Bernoulli draws from it. Training rows come from the
//! undrifted state; test slot `s` (0-based) sits at drift progress
//! `(s + 1) / n_slots`:
//!
//! - `covariate`: user and item popularity ranks slide towards IDs never seen in
//!   training and the numeric means move; the labelling rule is unchanged.
//! - `label`: the bias is recalibrated per slot to hit a target click rate.
//! - `concept`: category effects and `beta` rotate gradually towards an
//!   independent second rule.
//! - `abrupt_concept`: from `flip_slot` on, category effects and `beta` are
//!   scaled by `1 - 2 * magnitude` (a full sign flip at magnitude 1).

use std::f64::consts::FRAC_PI_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Zipf};
use serde::{Deserialize, Serialize};

use super::schema::{FeatureSchema, FieldKind, FieldSpec, Row, Value};
use super::slots::Slot;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftKind {
    Covariate,
    Label,
    Concept,
    AbruptConcept,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftScenario {
    pub kind: DriftKind,
    pub n_slots: usize,
    pub rows_per_slot: usize,
    pub train_rows: usize,
    pub magnitude: f64,
    pub seed: u64,
    /// First drifted slot (0-based) for `abrupt_concept`.
    pub flip_slot: usize,
    /// Click rate the training period is calibrated to.
    pub base_rate: f64,
    /// Explicit per-slot click rates for `label` drift.
    pub base_rates: Option<Vec<f64>>,
    pub n_users: usize,
    pub n_items: usize,
    pub n_categories: usize,
}

impl Default for DriftScenario {
    fn default() -> Self {
        Self {
            kind: DriftKind::AbruptConcept,
            n_slots: 10,
            rows_per_slot: 5_000,
            train_rows: 50_000,
            magnitude: 1.0,
            seed: 7,
            flip_slot: 5,
            base_rate: 0.25,
            base_rates: None,
            n_users: 2_000,
            n_items: 1_000,
            n_categories: 12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Generated {
    pub train: Vec<Row>,
    pub slots: Vec<Slot>,
}

const ZIPF_EXPONENT: f64 = 1.1;
const CALIBRATION_DRAWS: usize = 20_000;
const BETA_A: [f64; 2] = [0.8, -0.6];
const BETA_B: [f64; 2] = [-0.6, 0.8];

impl DriftScenario {
    pub fn schema() -> FeatureSchema {
        FeatureSchema::new(vec![
            FieldSpec::new("user", FieldKind::UserId),
            FieldSpec::new("item", FieldKind::ItemId),
            FieldSpec::new("category", FieldKind::Categorical),
            FieldSpec::new("x0", FieldKind::Numerical),
            FieldSpec::new("x1", FieldKind::Numerical),
            FieldSpec::new("click", FieldKind::Label),
            FieldSpec::new("ts", FieldKind::Timestamp),
        ])
        .expect("static schema is valid")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.n_slots == 0 || self.rows_per_slot == 0 {
            return bad("n_slots and rows_per_slot must be >= 1".into());
        }
        if self.n_users == 0 || self.n_items == 0 || self.n_categories == 0 {
            return bad("entity counts must be >= 1".into());
        }
        if !(self.magnitude.is_finite() && self.magnitude >= 0.0) {
            return bad(format!("invalid magnitude {}", self.magnitude));
        }
        if matches!(self.kind, DriftKind::Concept | DriftKind::AbruptConcept)
            && self.magnitude > 1.0
        {
            return bad(format!(
                "concept drift magnitude must lie in [0, 1], got {}",
                self.magnitude
            ));
        }
        if self.kind == DriftKind::AbruptConcept && self.flip_slot >= self.n_slots {
            return bad(format!(
                "flip_slot {} is outside {} slots",
                self.flip_slot, self.n_slots
            ));
        }
        if !(self.base_rate > 0.0 && self.base_rate < 1.0) {
            return bad(format!(
                "base_rate must lie in (0, 1), got {}",
                self.base_rate
            ));
        }
        if self.kind == DriftKind::Label {
            for s in 0..self.n_slots {
                let r = self.label_rate(s)?;
                if !(r > 0.0 && r < 1.0) {
                    return bad(format!(
                        "invalid magnitude: slot {s} click rate {r} is outside (0, 1)"
                    ));
                }
            }
        }
        Ok(())
    }

    fn progress(&self, slot: Option<usize>) -> f64 {
        slot.map_or(0.0, |s| (s + 1) as f64 / self.n_slots as f64)
    }

    fn label_rate(&self, slot: usize) -> Result<f64> {
        match &self.base_rates {
            Some(r) if r.len() != self.n_slots => Err(Error::InvalidParameter(format!(
                "base_rates has {} entries for {} slots",
                r.len(),
                self.n_slots
            ))),
            Some(r) => Ok(r[slot]),
            None => Ok(self.base_rate * (1.0 + self.magnitude * self.progress(Some(slot)))),
        }
    }

    pub fn generate(&self) -> Result<Generated> {
        self.validate()?;
        let world = World::new(self);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let train_state = world.state(self, None, world.calibrate(self, None, self.base_rate));
        let mut ts = 0i64;
        let train = (0..self.train_rows)
            .map(|_| world.sample(&train_state, &mut rng, &mut ts))
            .collect();
        let mut slots = Vec::with_capacity(self.n_slots);
        for s in 0..self.n_slots {
            let bias = match self.kind {
                DriftKind::Label => world.calibrate(self, Some(s), self.label_rate(s)?),
                _ => train_state.bias,
            };
            let state = world.state(self, Some(s), bias);
            let rows: Vec<Row> = (0..self.rows_per_slot)
                .map(|_| world.sample(&state, &mut rng, &mut ts))
                .collect();
            let time_range = (rows[0].timestamp, rows[rows.len() - 1].timestamp);
            slots.push(Slot {
                index: s,
                rows,
                time_range,
            });
        }
        Ok(Generated { train, slots })
    }
}

struct World {
    n_users: usize,
    n_items: usize,
    user_bias: Vec<f64>,
    user_type: Vec<usize>,
    item_bias: Vec<f64>,
    item_cat: Vec<usize>,
    effect_a: [Vec<f64>; 2],
    effect_b: [Vec<f64>; 2],
    user_zipf: Zipf<f64>,
    item_zipf: Zipf<f64>,
}

struct State {
    bias: f64,
    user_shift: usize,
    item_shift: usize,
    num_mean: f64,
    effect: [Vec<f64>; 2],
    beta: [f64; 2],
}

impl World {
    fn new(sc: &DriftScenario) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(sc.seed ^ 0x05ee_d0f5_7a7e);
        let mut normal = |scale: f64, n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                .collect()
        };
        // Users and items beyond the first n_* only show up under covariate shift.
        let user_bias = normal(0.5, 2 * sc.n_users);
        let item_bias = normal(0.5, 2 * sc.n_items);
        let effect_a = [normal(1.2, sc.n_categories), normal(1.2, sc.n_categories)];
        let effect_b = [normal(1.2, sc.n_categories), normal(1.2, sc.n_categories)];
        let user_type = (0..2 * sc.n_users)
            .map(|_| rng.random_range(0..2))
            .collect();
        let item_cat = (0..2 * sc.n_items)
            .map(|_| rng.random_range(0..sc.n_categories))
            .collect();
        Self {
            n_users: sc.n_users,
            n_items: sc.n_items,
            user_bias,
            user_type,
            item_bias,
            item_cat,
            effect_a,
            effect_b,
            user_zipf: Zipf::new(sc.n_users as f64, ZIPF_EXPONENT).expect("n_users >= 1"),
            item_zipf: Zipf::new(sc.n_items as f64, ZIPF_EXPONENT).expect("n_items >= 1"),
        }
    }

    fn state(&self, sc: &DriftScenario, slot: Option<usize>, bias: f64) -> State {
        let rho = sc.progress(slot);
        let m = sc.magnitude;
        let (user_shift, item_shift, num_mean) = if sc.kind == DriftKind::Covariate {
            (
                (m * rho * self.n_users as f64).round() as usize,
                (m * rho * self.n_items as f64).round() as usize,
                m * rho * 1.5,
            )
        } else {
            (0, 0, 0.0)
        };
        let mix = |a: f64, b: f64, ca: f64, cb: f64| ca * a + cb * b;
        let (ca, cb) = match (sc.kind, slot) {
            (DriftKind::Concept, Some(_)) => {
                let theta = m * rho * FRAC_PI_2;
                (theta.cos(), theta.sin())
            }
            (DriftKind::AbruptConcept, Some(s)) if s >= sc.flip_slot => (1.0 - 2.0 * m, 0.0),
            _ => (1.0, 0.0),
        };
        let effect = [0, 1].map(|t| {
            self.effect_a[t]
                .iter()
                .zip(&self.effect_b[t])
                .map(|(&a, &b)| mix(a, b, ca, cb))
                .collect()
        });
        let beta = [0, 1].map(|j| mix(BETA_A[j], BETA_B[j], ca, cb));
        State {
            bias,
            user_shift,
            item_shift,
            num_mean,
            effect,
            beta,
        }
    }

    /// Draws `(user, item, x0, x1)` and the logit without the global bias.
    fn draw(&self, st: &State, rng: &mut ChaCha8Rng) -> (usize, usize, f64, f64, f64) {
        let u = (self.user_zipf.sample(rng) as usize - 1 + st.user_shift) % (2 * self.n_users);
        let i = (self.item_zipf.sample(rng) as usize - 1 + st.item_shift) % (2 * self.n_items);
        let x0 = st.num_mean + rng.sample::<f64, _>(StandardNormal);
        let x1 = st.num_mean + rng.sample::<f64, _>(StandardNormal);
        let logit = self.user_bias[u]
            + self.item_bias[i]
            + st.effect[self.user_type[u]][self.item_cat[i]]
            + st.beta[0] * x0
            + st.beta[1] * x1;
        (u, i, x0, x1, logit)
    }

    fn sample(&self, st: &State, rng: &mut ChaCha8Rng, ts: &mut i64) -> Row {
        let (u, i, x0, x1, logit) = self.draw(st, rng);
        let truth = sigmoid(st.bias + logit);
        let label = u8::from(rng.random::<f64>() < truth);
        *ts += 1;
        Row {
            features: vec![
                Value::Token(format!("u{u}")),
                Value::Token(format!("i{i}")),
                Value::Token(format!("c{}", self.item_cat[i])),
                Value::Number(x0),
                Value::Number(x1),
            ],
            label,
            timestamp: *ts - 1,
            truth: Some(truth),
        }
    }

    /// Bias for which the mean true click probability equals `rate`, found by
    /// bisection over a fixed Monte-Carlo sample of the period's features.
    fn calibrate(&self, sc: &DriftScenario, slot: Option<usize>, rate: f64) -> f64 {
        let st = self.state(sc, slot, 0.0);
        let tag = slot.map_or(0, |s| s as u64 + 1);
        let mut rng = ChaCha8Rng::seed_from_u64(sc.seed ^ 0xca11_b0a7 ^ (tag << 32));
        let logits: Vec<f64> = (0..CALIBRATION_DRAWS)
            .map(|_| self.draw(&st, &mut rng).4)
            .collect();
        let mean_at =
            |b: f64| logits.iter().map(|l| sigmoid(b + l)).sum::<f64>() / logits.len() as f64;
        let (mut lo, mut hi) = (-30.0, 30.0);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if mean_at(mid) < rate {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
