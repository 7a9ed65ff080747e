//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::Vector3;
use nanolabel::label::SyntheticMeasurement;
use nanolabel::{ErrorRadii, LabelKind, MeasurementSpec, Point3, PointCloud};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Mutual three-sigma box membership, written out per axis.
pub fn boxes_agree(a: &Vector3<f64>, ra: ErrorRadii, b: &Vector3<f64>, rb: ErrorRadii) -> bool {
    let ra = ra.components();
    let rb = rb.components();
    (0..3).all(|k| {
        let d = (a[k] - b[k]).abs();
        d <= 3.0 * ra[k] as f64 && d <= 3.0 * rb[k] as f64
    })
}

/// Largest number of mutually-in-box pairs over all injective partial
/// assignments, by exhaustive search.
pub fn oracle_max_pairs(reference: &PointCloud, aligned: &[Vector3<f64>], radii: &[ErrorRadii]) -> usize {
    let xs = reference.vectors();
    let ok: Vec<Vec<bool>> = xs
        .iter()
        .zip(reference.radii())
        .map(|(x, &rx)| {
            aligned
                .iter()
                .zip(radii)
                .map(|(y, &ry)| boxes_agree(x, rx, y, ry))
                .collect()
        })
        .collect();

    fn search(i: usize, ok: &[Vec<bool>], used: &mut Vec<bool>) -> usize {
        if i == ok.len() {
            return 0;
        }
        let mut best = search(i + 1, ok, used);
        for j in 0..used.len() {
            if ok[i][j] && !used[j] {
                used[j] = true;
                best = best.max(1 + search(i + 1, ok, used));
                used[j] = false;
            }
        }
        best
    }
    search(0, &ok, &mut vec![false; aligned.len()])
}

/// A handful of beads packed into a few hundred nanometres, so that error
/// boxes of different points overlap.
pub fn clustered_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
    let corner = [
        rng.gen_range(0..999_000i64),
        rng.gen_range(0..999_000i64),
        rng.gen_range(0..99_000i64),
    ];
    let points = (0..n)
        .map(|_| {
            Point3::new(
                corner[0] + rng.gen_range(0..400),
                corner[1] + rng.gen_range(0..400),
                corner[2] + rng.gen_range(0..400),
            )
        })
        .collect();
    let radii = (0..n)
        .map(|_| ErrorRadii::new(rng.gen_range(1..40), rng.gen_range(1..40), rng.gen_range(1..40)).unwrap())
        .collect();
    PointCloud::new(LabelKind::Beads, points, radii).unwrap()
}

/// Small reference plus a noise-free, posed measurement of it.
pub fn oracle_instance(seed: u64) -> (PointCloud, SyntheticMeasurement) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(3..=6);
    let reference = clustered_cloud(&mut rng, n);
    let measurement = nanolabel::synthesize_measurement(&reference, &MeasurementSpec::lab(seed)).unwrap();
    (reference, measurement)
}

/// A realistic noisy pair: contamination in [0.1, 0.2] and positional noise.
pub fn noisy_pair(kind: LabelKind, n: usize, seed: u64) -> (PointCloud, SyntheticMeasurement) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let reference = nanolabel::generate_reference(kind, n, seed).unwrap();
    let spec = MeasurementSpec {
        lost_fraction: rng.gen_range(0.1..=0.2),
        artifact_fraction: rng.gen_range(0.1..=0.2),
        noise_enabled: true,
        ..MeasurementSpec::lab(seed.wrapping_add(1))
    };
    let measurement = nanolabel::synthesize_measurement(&reference, &spec).unwrap();
    (reference, measurement)
}
