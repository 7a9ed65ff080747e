//! The equality decision between a reference and a measurement.
//!
//! 1. Reject outright when the point counts differ by more than
//!    `max_size_deviation · |X|`; padding a label with extra particles must
//!    not buy matches.
//! 2. Register once per rotation subcube.
//! 3. Score every registration by the share of reference points that have a
//!    uniquely assigned partner with each point inside the other's error box.
//! 4. Keep the best score and compare it with the threshold.

use std::time::{Duration, Instant};

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cpd::{self, CpdConfig, Posterior, RegistrationResult};
use crate::error::{Error, Result};
use crate::label::{ErrorRadii, PointCloud};
use crate::transform::RigidTransform;

/// Error boxes span three standard deviations on each side.
pub const BOX_SIGMAS: f64 = 3.0;

/// Axis-aligned box `[c − 3σ, c + 3σ]` per axis around a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorBox {
    pub center: Vector3<f64>,
    pub half_extents: Vector3<f64>,
}

impl ErrorBox {
    pub fn new(center: Vector3<f64>, radii: ErrorRadii) -> Self {
        Self {
            center,
            half_extents: radii.to_vector() * BOX_SIGMAS,
        }
    }

    /// Closed box membership.
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|k| (p[k] - self.center[k]).abs() <= self.half_extents[k])
    }
}

/// A measurement mapped into the reference frame. Coordinates stay
/// fractional so no rounding is introduced by the alignment.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedCloud {
    pub points: Vec<Vector3<f64>>,
    pub radii: Vec<ErrorRadii>,
}

impl AlignedCloud {
    pub fn new(measurement: &PointCloud, transform: &RigidTransform) -> Self {
        Self {
            points: measurement
                .points()
                .iter()
                .map(|p| transform.apply(&p.to_vector()))
                .collect(),
            radii: measurement.radii().to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    /// Largest accepted `||X| − |Y|| / |X|`.
    pub max_size_deviation: f64,
    /// The clouds are equal when the best match fraction exceeds this.
    pub match_threshold: f64,
    pub divisions_per_axis: usize,
    pub cpd: CpdConfig,
    /// Upper bound on concurrently running registrations.
    pub max_parallel: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            max_size_deviation: 0.25,
            match_threshold: 0.5,
            divisions_per_axis: 3,
            cpd: CpdConfig::default(),
            max_parallel: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

impl VerifyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.match_threshold > 0.0 && self.match_threshold < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "match threshold {} outside (0, 1)",
                self.match_threshold
            )));
        }
        if !(self.max_size_deviation > 0.0 && self.max_size_deviation < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "size deviation {} outside (0, 1)",
                self.max_size_deviation
            )));
        }
        if self.divisions_per_axis == 0 {
            return Err(Error::InvalidArgument("divisions_per_axis must be at least 1".into()));
        }
        if self.max_parallel == 0 {
            return Err(Error::InvalidArgument("max_parallel must be at least 1".into()));
        }
        self.cpd.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub equal: bool,
    pub best_fraction: f64,
    /// One score per subcube in subcube order; empty after a size rejection.
    pub per_subcube_fractions: Vec<f64>,
    pub best_subcube_index: Option<usize>,
    pub size_rejected: bool,
    /// Transform of the winning registration (measurement → reference).
    pub best_transform: Option<RigidTransform>,
    #[serde(rename = "elapsed_ms", with = "duration_ms")]
    pub elapsed: Duration,
}

impl Verdict {
    /// Compares everything except the wall-clock time.
    pub fn same_outcome(&self, other: &Verdict) -> bool {
        self.equal == other.equal
            && self.best_fraction == other.best_fraction
            && self.per_subcube_fractions == other.per_subcube_fractions
            && self.best_subcube_index == other.best_subcube_index
            && self.size_rejected == other.size_rejected
            && self.best_transform == other.best_transform
    }
}

mod duration_ms {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        (d.as_secs_f64() * 1e3).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let ms = f64::deserialize(d)?;
        Ok(Duration::from_secs_f64(ms.max(0.0) / 1e3))
    }
}

/// True when each point lies in the other's error box.
pub fn mutually_in_box(a: &Vector3<f64>, ra: ErrorRadii, b: &Vector3<f64>, rb: ErrorRadii) -> bool {
    ErrorBox::new(*a, ra).contains(b) && ErrorBox::new(*b, rb).contains(a)
}

/// Reference/measurement index pairs that count towards the match fraction.
///
/// Each reference point proposes its most probable partner. Proposals are
/// accepted in descending posterior order (ties by ascending reference
/// index) while the measurement point is still free, and an accepted pair
/// counts only when the two points are mutually inside their error boxes.
pub fn counted_pairs(
    reference: &PointCloud,
    aligned: &AlignedCloud,
    posterior: &Posterior,
) -> Result<Vec<(usize, usize)>> {
    let expected = (reference.len(), aligned.len());
    if posterior.shape() != expected || aligned.points.len() != aligned.radii.len() {
        return Err(Error::InvalidArgument(format!(
            "posterior has shape {:?}, clouds need {:?}",
            posterior.shape(),
            expected
        )));
    }

    let mut proposals: Vec<(usize, usize, f64)> = (0..reference.len())
        .filter_map(|i| posterior.argmax(i).map(|(j, p)| (i, j, p)))
        .collect();
    proposals.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));

    let reference_points = reference.vectors();
    let mut taken = vec![false; aligned.len()];
    let mut pairs = Vec::new();
    for (i, j, _) in proposals {
        if taken[j] {
            continue;
        }
        taken[j] = true;
        if mutually_in_box(
            &reference_points[i],
            reference.radii()[i],
            &aligned.points[j],
            aligned.radii[j],
        ) {
            pairs.push((i, j));
        }
    }
    pairs.sort_unstable();
    Ok(pairs)
}

/// Share of reference points with a counted partner.
pub fn match_fraction(
    reference: &PointCloud,
    aligned: &AlignedCloud,
    posterior: &Posterior,
) -> Result<f64> {
    Ok(counted_pairs(reference, aligned, posterior)?.len() as f64 / reference.len() as f64)
}

/// `||X| − |Y|| / |X|`.
pub fn size_deviation(reference: &PointCloud, measurement: &PointCloud) -> f64 {
    reference.len().abs_diff(measurement.len()) as f64 / reference.len() as f64
}

fn score(
    reference: &PointCloud,
    measurement: &PointCloud,
    result: &RegistrationResult,
) -> Result<f64> {
    let aligned = AlignedCloud::new(measurement, &result.transform);
    match_fraction(reference, &aligned, &result.posterior)
}

/// Decides whether `measurement` was taken from the label `reference`
/// describes.
pub fn verify(reference: &PointCloud, measurement: &PointCloud, config: &VerifyConfig) -> Result<Verdict> {
    config.validate()?;
    if reference.kind() != measurement.kind() {
        return Err(Error::InvalidArgument(format!(
            "reference holds {} but measurement holds {}",
            reference.kind(),
            measurement.kind()
        )));
    }
    let start = Instant::now();

    if size_deviation(reference, measurement) > config.max_size_deviation {
        return Ok(Verdict {
            equal: false,
            best_fraction: 0.0,
            per_subcube_fractions: Vec::new(),
            best_subcube_index: None,
            size_rejected: true,
            best_transform: None,
            elapsed: start.elapsed(),
        });
    }

    let rotations = cpd::decompose_rotation_space(config.divisions_per_axis)?;
    let run = |r0| -> Result<(f64, RigidTransform)> {
        let result = cpd::register(reference, measurement, r0, &config.cpd)?;
        Ok((score(reference, measurement, &result)?, result.transform))
    };
    let outcomes: Vec<Result<(f64, RigidTransform)>> = if config.max_parallel == 1 {
        rotations.iter().map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.max_parallel.min(rotations.len()))
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
        pool.install(|| rotations.par_iter().map(run).collect())
    };
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;

    let mut best = 0;
    for (k, (f, _)) in outcomes.iter().enumerate() {
        if *f > outcomes[best].0 {
            best = k;
        }
    }
    let best_fraction = outcomes[best].0;
    Ok(Verdict {
        equal: best_fraction > config.match_threshold,
        best_fraction,
        per_subcube_fractions: outcomes.iter().map(|(f, _)| *f).collect(),
        best_subcube_index: Some(best),
        size_rejected: false,
        best_transform: Some(outcomes[best].1),
        elapsed: start.elapsed(),
    })
}
