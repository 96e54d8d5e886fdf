use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use slowfast::lsh::{collision_probability, cosine, hash_bit, SrpHashBank};

fn gaussian(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

/// Unit vectors `x`, `y` in `R^d` at angle `theta`.
fn pair_at_angle(theta: f64, d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; d];
    let mut y = vec![0.0; d];
    x[0] = 1.0;
    y[0] = theta.cos();
    y[1] = theta.sin();
    (x, y)
}

/// Fraction of single-bit hashes, each from its own seeded bank, on which `x`
/// and `y` agree.
fn agreement(x: &[f64], y: &[f64], draws: u64) -> f64 {
    let mut same = 0;
    for seed in 0..draws {
        let bank = SrpHashBank::new(x.len(), 1, 1, seed).unwrap();
        let plane = bank.plane(0, 0);
        same += usize::from(hash_bit(plane, x).unwrap() == hash_bit(plane, y).unwrap());
    }
    same as f64 / draws as f64
}

#[test]
fn collision_law_over_angles() {
    let angles = [0.0, PI / 4.0, PI / 2.0, 3.0 * PI / 4.0, PI];
    let mut previous = f64::INFINITY;
    for theta in angles {
        let (x, y) = pair_at_angle(theta, 6);
        let rate = agreement(&x, &y, 10_000);
        let expected = 1.0 - theta / PI;
        assert!(
            (rate - expected).abs() <= 0.02,
            "theta {theta}: {rate} vs {expected}"
        );
        assert!((collision_probability(cosine(&x, &y), 1) - expected).abs() < 1e-12);
        // non-increasing in the angle
        assert!(rate <= previous);
        previous = rate;
    }
}

#[test]
fn orthogonal_pair_collides_half_the_time() {
    let (x, y) = pair_at_angle(PI / 2.0, 3);
    let rate = agreement(&x, &y, 10_000);
    assert!((rate - 0.5).abs() <= 0.02, "{rate}");
}

#[test]
fn multi_bit_collision_is_power_of_single_bit() {
    // a 4-bit bucket collides only when all four bits agree
    let theta = PI / 3.0;
    let (x, y) = pair_at_angle(theta, 5);
    let draws = 10_000;
    let mut same = 0;
    for seed in 0..draws {
        let bank = SrpHashBank::new(5, 4, 1, seed).unwrap();
        same += usize::from(bank.bucket_indices(&x).unwrap() == bank.bucket_indices(&y).unwrap());
    }
    let rate = same as f64 / draws as f64;
    let expected = (1.0 - theta / PI).powi(4);
    assert!((rate - expected).abs() <= 0.02, "{rate} vs {expected}");
}

#[test]
fn equal_parameters_give_equal_indices() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let corpus: Vec<Vec<f64>> = (0..1_000).map(|_| gaussian(&mut rng, 24)).collect();
    let a = SrpHashBank::new(24, 12, 8, 1234).unwrap();
    let b = SrpHashBank::new(24, 12, 8, 1234).unwrap();
    let other = SrpHashBank::new(24, 12, 8, 1235).unwrap();
    let mut differs = false;
    for x in &corpus {
        let ia = a.bucket_indices(x).unwrap();
        assert_eq!(ia, b.bucket_indices(x).unwrap());
        assert!(ia.iter().all(|&i| i < 1 << 12));
        differs |= ia != other.bucket_indices(x).unwrap();
    }
    assert!(differs);
}

#[test]
fn scale_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let bank = SrpHashBank::new(10, 16, 6, 5).unwrap();
    for _ in 0..200 {
        let x = gaussian(&mut rng, 10);
        let c: f64 = rng.random_range(1e-3..1e3);
        let scaled: Vec<f64> = x.iter().map(|v| v * c).collect();
        assert_eq!(
            bank.bucket_indices(&x).unwrap(),
            bank.bucket_indices(&scaled).unwrap()
        );
    }
}

#[test]
fn bank_example_shape() {
    let bank = SrpHashBank::new(8, 16, 10, 42).unwrap();
    assert_eq!(bank.num_planes(), 160);
    assert_eq!(bank.num_buckets(), 65_536);
}

#[test]
fn hash_sets_are_independent() {
    // bits of different sets agree on an orthogonal pair about half the time,
    // as they would for independently drawn planes
    let (x, y) = pair_at_angle(PI / 2.0, 4);
    let bank = SrpHashBank::new(4, 1, 10_000, 77).unwrap();
    let same = (0..10_000)
        .filter(|&k| {
            hash_bit(bank.plane(k, 0), &x).unwrap() == hash_bit(bank.plane(k, 0), &y).unwrap()
        })
        .count();
    assert!((same as f64 / 10_000.0 - 0.5).abs() <= 0.02);
}
