mod common;

use nalgebra::{Rotation3, Vector3};
use nanolabel::cpd::{self, decompose_rotation_space, posterior_for_aligned};
use nanolabel::verify::{counted_pairs, AlignedCloud};
use nanolabel::{register, verify, CpdConfig, LabelKind, Point3, PointCloud, VerifyConfig};
use proptest::prelude::*;

use common::{noisy_pair, oracle_instance, oracle_max_pairs};

#[test]
fn greedy_matches_exhaustive_oracle_without_noise() {
    for seed in 0..200 {
        let (reference, m) = oracle_instance(seed);
        let aligned = AlignedCloud::new(&m.cloud, &m.truth.inverse());
        let posterior = posterior_for_aligned(&reference, &aligned.points, 100.0, 0.2).unwrap();
        let pairs = counted_pairs(&reference, &aligned, &posterior).unwrap();
        let oracle = oracle_max_pairs(&reference, &aligned.points, &aligned.radii);
        assert_eq!(pairs.len(), oracle, "seed {seed}");
        assert_eq!(oracle, reference.len(), "seed {seed}");
    }
}

#[test]
fn greedy_never_beats_the_oracle() {
    for seed in 0..100 {
        let (reference, _) = oracle_instance(seed);
        let mut spec = nanolabel::MeasurementSpec::lab(seed + 1000);
        spec.noise_enabled = true;
        spec.lost_fraction = 0.2;
        spec.artifact_fraction = 0.2;
        let noisy = nanolabel::synthesize_measurement(&reference, &spec).unwrap();
        let aligned = AlignedCloud::new(&noisy.cloud, &noisy.truth.inverse());
        let posterior = posterior_for_aligned(&reference, &aligned.points, 400.0, 0.2).unwrap();
        let pairs = counted_pairs(&reference, &aligned, &posterior).unwrap();
        assert!(pairs.len() <= oracle_max_pairs(&reference, &aligned.points, &aligned.radii));

        // Unique in both coordinates.
        let mut js: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        js.sort_unstable();
        js.dedup();
        assert_eq!(js.len(), pairs.len());
    }
}

#[test]
fn em_objective_never_increases() {
    let rotations = decompose_rotation_space(3).unwrap();
    let config = CpdConfig::default();
    for seed in 0..100u64 {
        let kind = if seed % 2 == 0 { LabelKind::Beads } else { LabelKind::Rods };
        let (reference, m) = noisy_pair(kind, 20 + 2 * (seed as usize % 10), seed);
        let r0 = &rotations[(seed as usize * 7) % rotations.len()];
        let result = register(&reference, &m.cloud, r0, &config).unwrap();
        for (k, w) in result.objective_history.windows(2).enumerate() {
            assert!(
                w[1] <= w[0] + 1e-9 * w[0].abs(),
                "seed {seed} iteration {k}: {} -> {}",
                w[0],
                w[1]
            );
        }
    }
}

#[test]
fn posterior_rows_are_normalised_and_rotations_valid() {
    let config = CpdConfig::default();
    for (k, r0) in decompose_rotation_space(3).unwrap().iter().enumerate() {
        assert!((r0.matrix().transpose() * r0.matrix() - nalgebra::Matrix3::identity()).amax() < 1e-9);
        let (reference, m) = noisy_pair(LabelKind::Beads, 30, k as u64);
        let result = register(&reference, &m.cloud, r0, &config).unwrap();
        let p = &result.posterior;
        for i in 0..reference.len() {
            let total: f64 = p.row(i).iter().sum::<f64>() + p.outlier_mass(i);
            assert!((total - 1.0).abs() < 1e-8, "row {i}: {total}");
        }
        assert!(result.transform.orthonormality_error() < 1e-9);
        assert!((result.transform.determinant() - 1.0).abs() < 1e-9);
    }
}

fn shifted(cloud: &PointCloud, c: [i64; 3]) -> PointCloud {
    let points = cloud
        .points()
        .iter()
        .map(|p| Point3::new(p.x + c[0], p.y + c[1], p.z + c[2]))
        .collect();
    PointCloud::new(cloud.kind(), points, cloud.radii().to_vec()).unwrap()
}

#[test]
fn registration_is_translation_equivariant() {
    let config = CpdConfig::default();
    for seed in 0..10 {
        let (reference, m) = noisy_pair(LabelKind::Beads, 40, seed);
        let c = [12_345, -67_890, 4_321];
        let moved = shifted(&m.cloud, c);
        let a = register(&reference, &m.cloud, &Rotation3::identity(), &config).unwrap();
        let b = register(&reference, &moved, &Rotation3::identity(), &config).unwrap();
        assert!((a.transform.scale - b.transform.scale).abs() < 1e-6);
        assert!((a.transform.rotation.matrix() - b.transform.rotation.matrix()).amax() < 1e-6);
        // x = sR(y + c) + t' = sRy + t  ⇒  t' = t − sRc.
        let cv = Vector3::new(c[0] as f64, c[1] as f64, c[2] as f64);
        let expected = a.transform.translation - b.transform.rotation * cv * b.transform.scale;
        assert!((expected - b.transform.translation).amax() < 1e-6 * cv.norm().max(1.0));
    }
}

#[test]
fn verdict_is_independent_of_parallelism() {
    for seed in 0..3 {
        let (reference, m) = noisy_pair(LabelKind::Rods, 30, seed);
        let run = |p| {
            verify(
                &reference,
                &m.cloud,
                &VerifyConfig {
                    max_parallel: p,
                    ..VerifyConfig::default()
                },
            )
            .unwrap()
        };
        let one = run(1);
        assert_eq!(one.per_subcube_fractions.len(), 27);
        for p in [4, 27] {
            assert!(one.same_outcome(&run(p)), "parallelism {p}");
        }
    }
}

#[test]
fn best_fraction_covers_identity_subcube() {
    let config = VerifyConfig {
        max_parallel: 1,
        ..VerifyConfig::default()
    };
    for seed in 0..5 {
        let (reference, m) = noisy_pair(LabelKind::Beads, 35, seed);
        let verdict = verify(&reference, &m.cloud, &config).unwrap();
        let identity = register(&reference, &m.cloud, &Rotation3::identity(), &config.cpd).unwrap();
        let aligned = AlignedCloud::new(&m.cloud, &identity.transform);
        let f = nanolabel::match_fraction(&reference, &aligned, &identity.posterior).unwrap();
        assert!(verdict.best_fraction >= f);
        assert_eq!(verdict.per_subcube_fractions[13], f);
        let max = verdict.per_subcube_fractions.iter().cloned().fold(0.0, f64::max);
        assert_eq!(verdict.best_fraction, max);
        assert_eq!(verdict.equal, verdict.best_fraction > 0.5);
    }
}

#[test]
fn ten_degree_rotation_is_recovered_from_generated_label() {
    let reference = nanolabel::generate_reference(LabelKind::Beads, 60, 3).unwrap();
    let truth = Rotation3::from_axis_angle(&Vector3::z_axis(), 10f64.to_radians());
    let points: Vec<Vector3<f64>> = reference.vectors().iter().map(|p| truth * p).collect();
    let result = cpd::register(
        &reference,
        &PointCloud::new(
            LabelKind::Beads,
            points.iter().map(Point3::from_vector).collect(),
            reference.radii().to_vec(),
        )
        .unwrap(),
        &Rotation3::identity(),
        &CpdConfig::default(),
    )
    .unwrap();
    let err = (result.transform.rotation * truth).angle();
    assert!(err < 1e-4, "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn objective_is_monotone_for_any_pose(seed in any::<u64>(), k in 0usize..27) {
        let (reference, m) = noisy_pair(LabelKind::Beads, 20, seed);
        let r0 = decompose_rotation_space(3).unwrap()[k];
        let result = register(&reference, &m.cloud, &r0, &CpdConfig::default()).unwrap();
        for w in result.objective_history.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9 * w[0].abs());
        }
        prop_assert!(result.transform.orthonormality_error() < 1e-9);
    }
}
