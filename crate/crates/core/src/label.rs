//! Label domain types and the synthetic generator for references,
//! measurements and forgeries.
//!
//! A label is a box of `10^6 × 10^6 × 10^5` nm holding either gold beads (one
//! point each) or gold rods (two endpoint points each). Every point carries a
//! per-axis error radius, one standard deviation in nanometres, stored with
//! two decimal digits.

use nalgebra::{Rotation3, Vector3};
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::transform::RigidTransform;

/// Label extent along x, y and z in nanometres (exclusive upper bounds).
pub const LABEL_EXTENT_NM: [i64; 3] = [1_000_000, 1_000_000, 100_000];

pub const MIN_RADIUS_NM: u32 = 1;
pub const MAX_RADIUS_NM: u32 = 99;

/// Smallest and largest reference size accepted by the generator.
pub const MIN_GENERATED_POINTS: usize = 6;
pub const MAX_GENERATED_POINTS: usize = 1000;

const STREAM_REFERENCE: u64 = 1;
const STREAM_LOSS: u64 = 2;
const STREAM_NOISE: u64 = 3;
const STREAM_FORGERY: u64 = 4;
const STREAM_ARTIFACTS: u64 = 5;
const STREAM_POSE: u64 = 6;
const STREAM_ORDER: u64 = 7;

/// A point in integer nanometres.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[i64; 3]", into = "[i64; 3]")]
pub struct Point3 {
    pub x: i64,
    pub y: i64,
    pub z: i64,
}

impl Point3 {
    pub const fn new(x: i64, y: i64, z: i64) -> Self {
        Self { x, y, z }
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x as f64, self.y as f64, self.z as f64)
    }

    /// Rounds each coordinate to the nearest nanometre.
    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v.x.round() as i64, v.y.round() as i64, v.z.round() as i64)
    }

    pub fn coords(self) -> [i64; 3] {
        [self.x, self.y, self.z]
    }

    /// True when the point lies in the label box.
    pub fn in_label_box(self) -> bool {
        self.coords()
            .iter()
            .zip(LABEL_EXTENT_NM)
            .all(|(&c, extent)| (0..extent).contains(&c))
    }
}

impl From<[i64; 3]> for Point3 {
    fn from([x, y, z]: [i64; 3]) -> Self {
        Self { x, y, z }
    }
}

impl From<Point3> for [i64; 3] {
    fn from(p: Point3) -> Self {
        p.coords()
    }
}

/// Per-axis error radius (one standard deviation) in nanometres, `1..=99`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[u32; 3]", into = "[u32; 3]")]
pub struct ErrorRadii {
    sx: u32,
    sy: u32,
    sz: u32,
}

impl ErrorRadii {
    pub fn new(sx: u32, sy: u32, sz: u32) -> Result<Self> {
        for v in [sx, sy, sz] {
            if !(MIN_RADIUS_NM..=MAX_RADIUS_NM).contains(&v) {
                return Err(Error::Range {
                    what: "error radius",
                    value: v as i64,
                    min: MIN_RADIUS_NM as i64,
                    max: MAX_RADIUS_NM as i64,
                });
            }
        }
        Ok(Self { sx, sy, sz })
    }

    pub fn sx(self) -> u32 {
        self.sx
    }

    pub fn sy(self) -> u32 {
        self.sy
    }

    pub fn sz(self) -> u32 {
        self.sz
    }

    pub fn components(self) -> [u32; 3] {
        [self.sx, self.sy, self.sz]
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.sx as f64, self.sy as f64, self.sz as f64)
    }
}

impl TryFrom<[u32; 3]> for ErrorRadii {
    type Error = Error;

    fn try_from([sx, sy, sz]: [u32; 3]) -> Result<Self> {
        Self::new(sx, sy, sz)
    }
}

impl From<ErrorRadii> for [u32; 3] {
    fn from(r: ErrorRadii) -> Self {
        r.components()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelKind {
    Beads,
    Rods,
}

impl LabelKind {
    /// Mean and standard deviation of the per-axis error radius.
    pub fn radius_distribution(self) -> ([f64; 3], [f64; 3]) {
        match self {
            LabelKind::Beads => ([6.0, 5.0, 5.0], [10.0, 8.0, 8.0]),
            LabelKind::Rods => ([22.0, 19.0, 43.0], [11.0, 10.0, 21.0]),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LabelKind::Beads => "beads",
            LabelKind::Rods => "rods",
        }
    }
}

impl std::fmt::Display for LabelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for LabelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "beads" => Ok(LabelKind::Beads),
            "rods" => Ok(LabelKind::Rods),
            other => Err(Error::InvalidArgument(format!("unknown label kind {other:?}"))),
        }
    }
}

/// An ordered point cloud with one error radius per point.
///
/// Serialises as `{"kind": "beads"|"rods", "points": [[x,y,z],...],
/// "radii": [[sx,sy,sz],...]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "CloudRepr")]
pub struct PointCloud {
    kind: LabelKind,
    points: Vec<Point3>,
    radii: Vec<ErrorRadii>,
}

#[derive(Deserialize)]
struct CloudRepr {
    kind: LabelKind,
    points: Vec<Point3>,
    radii: Vec<ErrorRadii>,
}

impl TryFrom<CloudRepr> for PointCloud {
    type Error = Error;

    fn try_from(r: CloudRepr) -> Result<Self> {
        PointCloud::new(r.kind, r.points, r.radii)
    }
}

impl PointCloud {
    /// Builds a cloud; requires matching lengths and at least three points.
    ///
    /// Rod measurements lose and gain individual endpoints, so an odd count
    /// is accepted here. [`PointCloud::check_reference`] enforces the stricter
    /// reference rules.
    pub fn new(kind: LabelKind, points: Vec<Point3>, radii: Vec<ErrorRadii>) -> Result<Self> {
        if points.len() != radii.len() {
            return Err(Error::InvalidArgument(format!(
                "{} points but {} error radii",
                points.len(),
                radii.len()
            )));
        }
        if points.len() < 3 {
            return Err(Error::InvalidArgument(format!(
                "a point cloud needs at least 3 points, got {}",
                points.len()
            )));
        }
        Ok(Self {
            kind,
            points,
            radii,
        })
    }

    pub fn kind(&self) -> LabelKind {
        self.kind
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn radii(&self) -> &[ErrorRadii] {
        &self.radii
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn vectors(&self) -> Vec<Vector3<f64>> {
        self.points.iter().map(|p| p.to_vector()).collect()
    }

    /// Reference clouds lie in the label box and, for rods, pair up endpoints.
    pub fn check_reference(&self) -> Result<()> {
        if self.kind == LabelKind::Rods && !self.len().is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "a rod reference needs an even number of points, got {}",
                self.len()
            )));
        }
        for p in &self.points {
            for (axis, (c, extent)) in p.coords().into_iter().zip(LABEL_EXTENT_NM).enumerate() {
                if !(0..extent).contains(&c) {
                    return Err(Error::Range {
                        what: ["x coordinate", "y coordinate", "z coordinate"][axis],
                        value: c,
                        min: 0,
                        max: extent - 1,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Parameters of the rod geometry used by the generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    /// Rod length drawn uniformly from `[min, max]` nm.
    pub rod_length_nm: (f64, f64),
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            rod_length_nm: (40.0, 80.0),
        }
    }
}

/// How a synthetic measurement deviates from its reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSpec {
    /// Euler angles are drawn uniformly in `±rotation_deg_max` per axis.
    pub rotation_deg_max: f64,
    /// Share of reference points missing from the measurement.
    pub lost_fraction: f64,
    /// Share (relative to the reference size) of spurious extra points.
    pub artifact_fraction: f64,
    /// Perturb every surviving point by its own error radii.
    pub noise_enabled: bool,
    /// Extra isotropic Gaussian displacement in nm modelling a forger's
    /// placement error; 0 disables it.
    pub forgery_grade_nm: f64,
    /// Translation drawn uniformly in `±translation_max_nm` per axis.
    pub translation_max_nm: i64,
    pub seed: u64,
}

impl MeasurementSpec {
    pub const MAX_CONTAMINATION: f64 = 0.2;

    /// Rotated and shifted copy of the reference, nothing else.
    pub fn lab(seed: u64) -> Self {
        Self {
            rotation_deg_max: 20.0,
            lost_fraction: 0.0,
            artifact_fraction: 0.0,
            noise_enabled: false,
            forgery_grade_nm: 0.0,
            translation_max_nm: 100_000,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lost fraction", self.lost_fraction),
            ("artifact fraction", self.artifact_fraction),
        ] {
            if !(0.0..=Self::MAX_CONTAMINATION).contains(&v) {
                return Err(Error::InvalidArgument(format!(
                    "{name} {v} outside [0, {}]",
                    Self::MAX_CONTAMINATION
                )));
            }
        }
        if !(0.0..=180.0).contains(&self.rotation_deg_max) {
            return Err(Error::InvalidArgument(format!(
                "rotation bound {} deg outside [0, 180]",
                self.rotation_deg_max
            )));
        }
        if !(self.forgery_grade_nm >= 0.0 && self.forgery_grade_nm.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "forgery grade {} must be a non-negative number",
                self.forgery_grade_nm
            )));
        }
        if self.translation_max_nm < 0 {
            return Err(Error::InvalidArgument(
                "translation bound must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// A synthetic measurement with its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticMeasurement {
    pub cloud: PointCloud,
    /// Maps reference coordinates onto measurement coordinates (before the
    /// final rounding to whole nanometres).
    pub truth: RigidTransform,
    /// For every measurement point, the reference index it came from, or
    /// `None` for an artifact.
    pub origin: Vec<Option<usize>>,
}

impl SyntheticMeasurement {
    pub fn artifact_count(&self) -> usize {
        self.origin.iter().filter(|o| o.is_none()).count()
    }
}

/// `round(fraction · n)` with halves rounded up.
pub fn contamination_count(fraction: f64, n: usize) -> usize {
    (fraction * n as f64 + 0.5 + 1e-9).floor() as usize
}

fn draw_radii(kind: LabelKind, rng: &mut ChaCha8Rng) -> ErrorRadii {
    let (mean, std) = kind.radius_distribution();
    let mut c = [0u32; 3];
    for axis in 0..3 {
        let v = Normal::new(mean[axis], std[axis])
            .expect("radius distribution parameters are finite")
            .sample(rng)
            .round();
        c[axis] = v.clamp(MIN_RADIUS_NM as f64, MAX_RADIUS_NM as f64) as u32;
    }
    ErrorRadii::new(c[0], c[1], c[2]).expect("clamped radii are in range")
}

fn draw_box_point(rng: &mut ChaCha8Rng) -> Point3 {
    Point3::new(
        rng.gen_range(0..LABEL_EXTENT_NM[0]),
        rng.gen_range(0..LABEL_EXTENT_NM[1]),
        rng.gen_range(0..LABEL_EXTENT_NM[2]),
    )
}

fn draw_direction(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let n: f64 = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Generates a random reference label with the default rod geometry.
pub fn generate_reference(kind: LabelKind, n_points: usize, seed: u64) -> Result<PointCloud> {
    generate_reference_with(kind, n_points, seed, &GeneratorConfig::default())
}

pub fn generate_reference_with(
    kind: LabelKind,
    n_points: usize,
    seed: u64,
    config: &GeneratorConfig,
) -> Result<PointCloud> {
    if !(MIN_GENERATED_POINTS..=MAX_GENERATED_POINTS).contains(&n_points) {
        return Err(Error::InvalidArgument(format!(
            "reference size {n_points} outside [{MIN_GENERATED_POINTS}, {MAX_GENERATED_POINTS}]"
        )));
    }
    if kind == LabelKind::Rods && !n_points.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "rods contribute two endpoints each, {n_points} points is odd"
        )));
    }
    let (min_len, max_len) = config.rod_length_nm;
    if !(min_len > 0.0 && min_len <= max_len && max_len.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "rod length range [{min_len}, {max_len}] is invalid"
        )));
    }

    let mut rng = rng::stream(seed, STREAM_REFERENCE);
    let mut points = Vec::with_capacity(n_points);
    let mut radii = Vec::with_capacity(n_points);
    match kind {
        LabelKind::Beads => {
            for _ in 0..n_points {
                points.push(draw_box_point(&mut rng));
                radii.push(draw_radii(kind, &mut rng));
            }
        }
        LabelKind::Rods => {
            for _ in 0..n_points / 2 {
                let first = draw_box_point(&mut rng);
                let second = loop {
                    let length = if min_len < max_len {
                        rng.gen_range(min_len..=max_len)
                    } else {
                        min_len
                    };
                    let end = first.to_vector() + draw_direction(&mut rng) * length;
                    let end = Point3::from_vector(&end);
                    if end.in_label_box() {
                        break end;
                    }
                };
                points.push(first);
                radii.push(draw_radii(kind, &mut rng));
                points.push(second);
                radii.push(draw_radii(kind, &mut rng));
            }
        }
    }
    PointCloud::new(kind, points, radii)
}

/// Derives a measurement of `reference` according to `spec`.
///
/// Stages run in a fixed order (loss, noise, forgery, artifacts, pose) and
/// each stage draws from its own random stream, so changing one parameter
/// leaves the draws of the others untouched. The output order is shuffled.
pub fn synthesize_measurement(
    reference: &PointCloud,
    spec: &MeasurementSpec,
) -> Result<SyntheticMeasurement> {
    spec.validate()?;
    let kind = reference.kind();
    let n = reference.len();

    let lost = contamination_count(spec.lost_fraction, n);
    let artifacts = contamination_count(spec.artifact_fraction, n);
    if n - lost + artifacts < 3 {
        return Err(Error::InvalidArgument(format!(
            "measurement would keep only {} points",
            n - lost + artifacts
        )));
    }

    let mut removed = vec![false; n];
    for i in sample(&mut rng::stream(spec.seed, STREAM_LOSS), n, lost).iter() {
        removed[i] = true;
    }

    let mut noise_rng = rng::stream(spec.seed, STREAM_NOISE);
    let mut forgery_rng = rng::stream(spec.seed, STREAM_FORGERY);
    let mut positions: Vec<Vector3<f64>> = Vec::with_capacity(n - lost + artifacts);
    let mut radii = Vec::with_capacity(n - lost + artifacts);
    let mut origin = Vec::with_capacity(n - lost + artifacts);
    for (i, (p, r)) in reference.points().iter().zip(reference.radii()).enumerate() {
        if removed[i] {
            continue;
        }
        let mut v = p.to_vector();
        if spec.noise_enabled {
            for (axis, sigma) in r.components().into_iter().enumerate() {
                let z: f64 = StandardNormal.sample(&mut noise_rng);
                v[axis] += z * sigma as f64;
            }
        }
        if spec.forgery_grade_nm > 0.0 {
            for axis in 0..3 {
                let z: f64 = StandardNormal.sample(&mut forgery_rng);
                v[axis] += z * spec.forgery_grade_nm;
            }
        }
        positions.push(v);
        radii.push(*r);
        origin.push(Some(i));
    }

    let mut artifact_rng = rng::stream(spec.seed, STREAM_ARTIFACTS);
    for _ in 0..artifacts {
        positions.push(draw_box_point(&mut artifact_rng).to_vector());
        radii.push(draw_radii(kind, &mut artifact_rng));
        origin.push(None);
    }

    let mut pose_rng = rng::stream(spec.seed, STREAM_POSE);
    let max_angle = spec.rotation_deg_max.to_radians();
    let mut angle = || {
        if max_angle > 0.0 {
            pose_rng.gen_range(-max_angle..=max_angle)
        } else {
            0.0
        }
    };
    let (roll, pitch, yaw) = (angle(), angle(), angle());
    let rotation = Rotation3::from_euler_angles(roll, pitch, yaw);
    let t = spec.translation_max_nm;
    let translation = Vector3::new(
        pose_rng.gen_range(-t..=t) as f64,
        pose_rng.gen_range(-t..=t) as f64,
        pose_rng.gen_range(-t..=t) as f64,
    );
    let truth = RigidTransform::new(1.0, rotation, translation);

    let mut order: Vec<usize> = (0..positions.len()).collect();
    order.shuffle(&mut rng::stream(spec.seed, STREAM_ORDER));

    let points = order
        .iter()
        .map(|&k| Point3::from_vector(&truth.apply(&positions[k])))
        .collect();
    let radii = order.iter().map(|&k| radii[k]).collect();
    let origin = order.iter().map(|&k| origin[k]).collect();

    Ok(SyntheticMeasurement {
        cloud: PointCloud::new(kind, points, radii)?,
        truth,
        origin,
    })
}
