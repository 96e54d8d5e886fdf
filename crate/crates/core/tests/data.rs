use std::io::Cursor;

use slowfast::data::{
    drift_report, make_slots, read_csv, DriftKind, DriftScenario, FeatureSchema, FieldKind,
    FieldSpec, Row, Value,
};
use slowfast::harness::{run_stream, train, DataConfig, ExperimentConfig, Method};
use slowfast::metrics::log_loss;

fn scenario(kind: DriftKind, magnitude: f64) -> DriftScenario {
    DriftScenario {
        kind,
        magnitude,
        n_slots: 4,
        rows_per_slot: 2_000,
        train_rows: 4_000,
        flip_slot: 2,
        n_users: 300,
        n_items: 200,
        ..Default::default()
    }
}

fn ctr(rows: &[Row]) -> f64 {
    rows.iter().map(|r| f64::from(r.label)).sum::<f64>() / rows.len() as f64
}

#[test]
fn label_shift_hits_requested_rates() {
    let s = DriftScenario {
        kind: DriftKind::Label,
        n_slots: 2,
        rows_per_slot: 10_000,
        base_rates: Some(vec![0.2, 0.4]),
        ..scenario(DriftKind::Label, 1.0)
    };
    let g = s.generate().unwrap();
    assert!((ctr(&g.slots[0].rows) - 0.2).abs() < 0.03);
    assert!((ctr(&g.slots[1].rows) - 0.4).abs() < 0.03);
}

#[test]
fn zero_magnitude_means_no_drift() {
    for kind in [
        DriftKind::Covariate,
        DriftKind::Label,
        DriftKind::Concept,
        DriftKind::AbruptConcept,
    ] {
        let g = scenario(kind, 0.0).generate().unwrap();
        let train_mean =
            g.train.iter().map(|r| r.truth.unwrap()).sum::<f64>() / g.train.len() as f64;
        for slot in &g.slots {
            let m =
                slot.rows.iter().map(|r| r.truth.unwrap()).sum::<f64>() / slot.rows.len() as f64;
            assert!(
                (m - train_mean).abs() < 0.03,
                "{kind:?} slot {}",
                slot.index
            );
        }
    }
}

#[test]
fn labels_follow_true_probabilities() {
    let g = scenario(DriftKind::Concept, 0.5).generate().unwrap();
    let rows: Vec<&Row> = g.slots.iter().flat_map(|s| &s.rows).collect();
    let p: Vec<f64> = rows.iter().map(|r| r.truth.unwrap()).collect();
    let y: Vec<u8> = rows.iter().map(|r| r.label).collect();
    let entropy = p
        .iter()
        .map(|&q| -(q * q.ln() + (1.0 - q) * (1.0 - q).ln()))
        .sum::<f64>()
        / p.len() as f64;
    let ll = log_loss(&p, &y).unwrap();
    assert!(
        (ll - entropy).abs() < 0.02,
        "logloss {ll} entropy {entropy}"
    );
    assert!((ctr(&g.train) - 0.25).abs() < 0.03);
}

#[test]
fn generation_is_deterministic() {
    let a = scenario(DriftKind::Covariate, 1.0).generate().unwrap();
    let b = scenario(DriftKind::Covariate, 1.0).generate().unwrap();
    assert_eq!(a.train, b.train);
    assert_eq!(a.slots, b.slots);
    let c = DriftScenario {
        seed: 8,
        ..scenario(DriftKind::Covariate, 1.0)
    }
    .generate()
    .unwrap();
    assert_ne!(a.slots, c.slots);
}

#[test]
fn slots_partition_the_stream_in_order() {
    let g = scenario(DriftKind::Covariate, 1.0).generate().unwrap();
    let last_train = g.train.last().unwrap().timestamp;
    let mut prev = last_train;
    for (i, s) in g.slots.iter().enumerate() {
        assert_eq!(s.index, i);
        assert_eq!(s.rows.len(), 2_000);
        assert!(s.time_range.0 > prev);
        assert!(s.rows.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
        prev = s.time_range.1;
    }

    let rows: Vec<Row> = g.slots.into_iter().flat_map(|s| s.rows).collect();
    let total = rows.len();
    let slots = make_slots(rows, 3).unwrap();
    assert_eq!(
        slots.iter().map(|s| s.rows.len()).collect::<Vec<_>>(),
        [2_666, 2_666, 2_668]
    );
    assert_eq!(slots.iter().map(|s| s.rows.len()).sum::<usize>(), total);
}

#[test]
fn invalid_scenarios_are_rejected() {
    assert!(scenario(DriftKind::Concept, 1.5).generate().is_err());
    assert!(scenario(DriftKind::Covariate, -1.0).generate().is_err());
    let s = DriftScenario {
        flip_slot: 4,
        ..scenario(DriftKind::AbruptConcept, 1.0)
    };
    assert!(s.generate().is_err());
    let s = DriftScenario {
        base_rates: Some(vec![0.2]),
        ..scenario(DriftKind::Label, 1.0)
    };
    assert!(s.generate().is_err());
}

#[test]
fn abrupt_flip_hurts_the_frozen_model() {
    let mut c = ExperimentConfig::from_toml_str(
        r#"
[data]
source = "synthetic"

[model]
hidden_sizes = [16, 8]
epochs = 2

[memory]
num_arrays = 8

[compensation]
lambda = 0.5

[methods]
run = ["frozen"]
"#,
    )
    .unwrap();
    c.data = DataConfig::Synthetic(DriftScenario {
        train_rows: 20_000,
        ..scenario(DriftKind::AbruptConcept, 1.0)
    });
    let r = run_stream(&train(&c).unwrap(), &c, None).unwrap();
    let before = r.mean(Method::Frozen, 0..2, |s| s.auc);
    let after = r.mean(Method::Frozen, 2..4, |s| s.auc);
    assert!(before - after > 0.05, "before {before} after {after}");
}

const CSV: &str = "\
ts,user,item,price,click,note
3,u1,i1,1.5,1,x
1,u2,i2,2.5,0,y
2,u1,i3,0.5,1,z
bad,u3,i1,1.0,0,w
5,u2,i1,3.0,0,v
4,u3,i2,,1,u
6,u1,i2,1.0,1,t
";

fn csv_schema() -> FeatureSchema {
    FeatureSchema::new(vec![
        FieldSpec::new("user", FieldKind::UserId),
        FieldSpec::new("item", FieldKind::ItemId),
        FieldSpec::new("price", FieldKind::Numerical),
        FieldSpec::new("click", FieldKind::Label),
        FieldSpec::new("ts", FieldKind::Timestamp),
    ])
    .unwrap()
}

#[test]
fn csv_rows_are_sorted_and_split() {
    let data = read_csv(Cursor::new(CSV), &csv_schema(), Some(4)).unwrap();
    let ts = |rows: &[Row]| rows.iter().map(|r| r.timestamp).collect::<Vec<_>>();
    assert_eq!(data.skipped, 2);
    assert_eq!(ts(&data.train), [1, 2, 3]);
    assert_eq!(ts(&data.test), [5, 6]);
    assert_eq!(data.split_timestamp, 4);
    let first = &data.train[0];
    assert_eq!(first.label, 0);
    assert_eq!(first.features[0], Value::Token("u2".into()));
    assert_eq!(first.features[2], Value::Number(2.5));
    assert_eq!(first.truth, None);
}

#[test]
fn csv_missing_column_is_an_error() {
    let text = "ts,user,click\n1,u1,0\n";
    assert!(read_csv(Cursor::new(text), &csv_schema(), None).is_err());
}

#[test]
fn drift_report_tracks_slot_statistics() {
    let g = scenario(DriftKind::Covariate, 1.0).generate().unwrap();
    let mut schema = DriftScenario::schema();
    schema.fit(&g.train, 8).unwrap();
    let report = drift_report(&g.slots, &schema, |r| {
        Ok(r.features
            .iter()
            .filter_map(|v| match v {
                Value::Number(x) => Some(*x),
                Value::Token(_) => None,
            })
            .collect())
    })
    .unwrap();
    assert_eq!(report.len(), 4);
    for (d, s) in report.iter().zip(&g.slots) {
        assert_eq!(d.slot, s.index);
        assert!((d.ctr - ctr(&s.rows)).abs() < 1e-12);
        assert!(d.variance > 0.0);
        assert!(d.n_users > 0 && d.n_users <= 300);
        assert!(!d.category_ctr.is_empty());
    }
}
