//! Rigid Coherent Point Drift.
//!
//! The measurement `Y` (M points) is treated as the centroids of an isotropic
//! Gaussian mixture with a shared variance σ², plus a uniform outlier
//! component of weight `w`. The reference `X` (N points) is the data. EM
//! alternates between the posterior `P[n][m]` of reference point `n` having
//! been generated by measurement point `m` and the closed-form weighted
//! Procrustes update of scale, rotation, translation and σ².
//!
//! Coordinates are centred per cloud and divided by the reference's RMS
//! spread before EM, and the result is mapped back to nanometres, so callers
//! never see the normalised frame.

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::PointCloud;
use crate::transform::RigidTransform;

const DIM: f64 = 3.0;

/// Lower bound on σ² in the normalised frame (σ ≈ 0.04 nm at label scale).
const SIGMA2_FLOOR: f64 = 1e-14;

/// Terms this far below the row maximum are under one ulp of the row sum.
const EXP_CUTOFF: f64 = -40.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleMode {
    /// Estimate `s`, clamped to [`CpdConfig::scale_bounds`].
    Estimate,
    /// Keep `s = 1`.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CpdConfig {
    /// Weight of the uniform outlier component, in `[0, 1)`.
    pub outlier_weight: f64,
    pub max_iterations: usize,
    /// Stop when the relative change of the objective drops below this.
    pub tolerance: f64,
    pub scale_mode: ScaleMode,
    pub scale_bounds: (f64, f64),
}

impl Default for CpdConfig {
    fn default() -> Self {
        Self {
            outlier_weight: 0.2,
            max_iterations: 150,
            tolerance: 1e-6,
            scale_mode: ScaleMode::Estimate,
            scale_bounds: (0.8, 1.25),
        }
    }
}

impl CpdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.outlier_weight) {
            return Err(Error::InvalidArgument(format!(
                "outlier weight {} outside [0, 1)",
                self.outlier_weight
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument("max_iterations must be at least 1".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidArgument("tolerance must be positive".into()));
        }
        let (lo, hi) = self.scale_bounds;
        if !(lo > 0.0 && lo <= 1.0 && hi >= 1.0 && hi.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "scale bounds [{lo}, {hi}] must be positive and contain 1"
            )));
        }
        Ok(())
    }
}

/// Correspondence probabilities between reference rows and measurement
/// columns, plus the outlier mass of every row.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    outlier: Vec<f64>,
}

impl Posterior {
    /// Builds a posterior from explicit values; each row's mixture mass plus
    /// its outlier mass should sum to one.
    pub fn from_rows(rows: Vec<Vec<f64>>, outlier: Vec<f64>) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if outlier.len() != n || rows.iter().any(|r| r.len() != m) {
            return Err(Error::InvalidArgument("ragged posterior matrix".into()));
        }
        Ok(Self {
            rows: n,
            cols: m,
            data: rows.into_iter().flatten().collect(),
            outlier,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn outlier_mass(&self, i: usize) -> f64 {
        self.outlier[i]
    }

    /// Column index of the largest entry in row `i` (lowest index on ties),
    /// or `None` when the whole row is zero.
    pub fn argmax(&self, i: usize) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (j, &p) in self.row(i).iter().enumerate() {
            if p > 0.0 && best.is_none_or(|(_, b)| p > b) {
                best = Some((j, p));
            }
        }
        best
    }
}

#[derive(Debug, Clone)]
pub struct RegistrationResult {
    /// Maps measurement coordinates into the reference frame.
    pub transform: RigidTransform,
    pub posterior: Posterior,
    /// Number of M-steps performed.
    pub iterations_used: usize,
    /// Negative log-likelihood at the returned parameters (normalised frame).
    pub final_objective: f64,
    /// Objective after the initial E-step and after every iteration.
    pub objective_history: Vec<f64>,
    /// Final mixture variance in nm².
    pub sigma2_nm2: f64,
}

type V3 = [f64; 3];

#[inline]
fn dist2(a: &V3, b: &V3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Centres a cloud and reports its centroid and RMS spread.
fn centre(points: &[Vector3<f64>]) -> (Vector3<f64>, f64) {
    let n = points.len() as f64;
    let c = points.iter().sum::<Vector3<f64>>() / n;
    let spread = (points.iter().map(|p| (p - c).norm_squared()).sum::<f64>() / n).sqrt();
    (c, spread)
}

struct EStep {
    posterior: Posterior,
    nll: f64,
    /// Σ_m P[n][m] ŷ_m for every row.
    weighted_y: Vec<V3>,
    row_mass: Vec<f64>,
    col_mass: Vec<f64>,
}

impl EStep {
    fn with_shape(n: usize, m: usize) -> Self {
        Self {
            posterior: Posterior {
                rows: n,
                cols: m,
                data: vec![0.0; n * m],
                outlier: vec![0.0; n],
            },
            nll: 0.0,
            weighted_y: vec![[0.0; 3]; n],
            row_mass: vec![0.0; n],
            col_mass: vec![0.0; m],
        }
    }
}

fn e_step(x: &[V3], y: &[V3], moved: &[V3], sigma2: f64, w: f64) -> EStep {
    let mut out = EStep::with_shape(x.len(), y.len());
    e_step_into(x, y, moved, sigma2, w, &mut out);
    out
}

/// Overwrites every field of `out`.
fn e_step_into(x: &[V3], y: &[V3], moved: &[V3], sigma2: f64, w: f64, out: &mut EStep) {
    let n = x.len();
    let m = y.len();
    let inv_2s2 = 0.5 / sigma2;
    let log_c = if w > 0.0 {
        1.5 * (2.0 * std::f64::consts::PI * sigma2).ln() + (w / (1.0 - w)).ln()
            + (m as f64 / n as f64).ln()
    } else {
        f64::NEG_INFINITY
    };
    let log_norm = ((1.0 - w) / m as f64).ln() - 1.5 * (2.0 * std::f64::consts::PI * sigma2).ln();

    let EStep {
        posterior,
        nll: nll_out,
        weighted_y,
        row_mass,
        col_mass,
    } = out;
    let data = &mut posterior.data;
    let outlier = &mut posterior.outlier;
    col_mass.fill(0.0);
    let mut nll = 0.0;

    for (i, xi) in x.iter().enumerate() {
        let row = &mut data[i * m..(i + 1) * m];
        let mut amax = f64::NEG_INFINITY;
        for (slot, yj) in row.iter_mut().zip(moved) {
            let a = -dist2(xi, yj) * inv_2s2;
            *slot = a;
            if a > amax {
                amax = a;
            }
        }
        let mut sum = 0.0;
        for slot in row.iter_mut() {
            let d = *slot - amax;
            let e = if d < EXP_CUTOFF { 0.0 } else { d.exp() };
            *slot = e;
            sum += e;
        }
        let log_z = log_add_exp(amax + sum.ln(), log_c);
        let k = (amax - log_z).exp();
        let mut mass = 0.0;
        let mut wy = [0.0; 3];
        for (j, slot) in row.iter_mut().enumerate() {
            let p = *slot * k;
            *slot = p;
            if p != 0.0 {
                mass += p;
                col_mass[j] += p;
                wy[0] += p * y[j][0];
                wy[1] += p * y[j][1];
                wy[2] += p * y[j][2];
            }
        }
        outlier[i] = (log_c - log_z).exp();
        row_mass[i] = mass;
        weighted_y[i] = wy;
        nll -= log_norm + log_z;
    }
    *nll_out = nll;
}

#[derive(Clone, Copy)]
struct Params {
    scale: f64,
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    sigma2: f64,
}

fn move_points(y: &[V3], p: &Params, out: &mut [V3]) {
    let sr = p.rotation * p.scale;
    for (o, yj) in out.iter_mut().zip(y) {
        let v = sr * Vector3::new(yj[0], yj[1], yj[2]) + p.translation;
        *o = [v.x, v.y, v.z];
    }
}

/// Closed-form maximisation of the expected complete-data log-likelihood.
/// Returns `None` when the mixture explains no mass at all.
fn m_step(x: &[V3], y: &[V3], e: &EStep, config: &CpdConfig) -> Option<Params> {
    let np: f64 = e.row_mass.iter().sum();
    if !(np > 1e-12) {
        return None;
    }
    let to_v = |a: &V3| Vector3::new(a[0], a[1], a[2]);
    let mu_x = x
        .iter()
        .zip(&e.row_mass)
        .map(|(xi, &r)| to_v(xi) * r)
        .sum::<Vector3<f64>>()
        / np;
    let mu_y = y
        .iter()
        .zip(&e.col_mass)
        .map(|(yj, &c)| to_v(yj) * c)
        .sum::<Vector3<f64>>()
        / np;

    // A = Σ_nm P (x_n − μx)(y_m − μy)ᵀ, accumulated row by row.
    let mut a = Matrix3::zeros();
    for ((xi, wy), &r) in x.iter().zip(&e.weighted_y).zip(&e.row_mass) {
        if r == 0.0 {
            continue;
        }
        let dx = to_v(xi) - mu_x;
        let dy = to_v(wy) - mu_y * r;
        a += dx * dy.transpose();
    }
    let y_spread: f64 = y
        .iter()
        .zip(&e.col_mass)
        .map(|(yj, &c)| c * (to_v(yj) - mu_y).norm_squared())
        .sum();
    if !(y_spread > 0.0) {
        return None;
    }

    let svd = a.svd(true, true);
    let (u, v_t) = (svd.u?, svd.v_t?);
    let mut c = Matrix3::identity();
    c[(2, 2)] = (u * v_t).determinant().signum();
    let rotation = u * c * v_t;
    let trace = a.component_mul(&rotation).sum();

    let scale = match config.scale_mode {
        ScaleMode::Fixed => 1.0,
        ScaleMode::Estimate => {
            let (lo, hi) = config.scale_bounds;
            (trace / y_spread).clamp(lo, hi)
        }
    };
    let translation = mu_x - rotation * mu_y * scale;

    let mut params = Params {
        scale,
        rotation,
        translation,
        sigma2: 0.0,
    };
    // σ² from the weighted residuals directly; the expanded trace form loses
    // too many digits once the clouds are aligned to sub-nanometre level.
    let mut moved = vec![[0.0; 3]; y.len()];
    move_points(y, &params, &mut moved);
    let m = y.len();
    let mut residual = 0.0;
    for (i, xi) in x.iter().enumerate() {
        for (&p, yj) in e.posterior.data[i * m..(i + 1) * m].iter().zip(&moved) {
            if p != 0.0 {
                residual += p * dist2(xi, yj);
            }
        }
    }
    params.sigma2 = (residual / (np * DIM)).max(SIGMA2_FLOOR);
    Some(params)
}

fn normalised(points: &[Vector3<f64>], centroid: &Vector3<f64>, spread: f64) -> Vec<V3> {
    points
        .iter()
        .map(|p| {
            let v = (p - centroid) / spread;
            [v.x, v.y, v.z]
        })
        .collect()
}

fn check_rotation(r: &Rotation3<f64>) -> Result<()> {
    let m = r.matrix();
    let ortho = (m.transpose() * m - Matrix3::identity()).amax();
    if !(ortho < 1e-9 && (m.determinant() - 1.0).abs() < 1e-9) {
        return Err(Error::InvalidArgument("initial rotation is not a proper rotation".into()));
    }
    Ok(())
}

/// Registers `measurement` onto `reference`, starting from `initial_rotation`.
pub fn register(
    reference: &PointCloud,
    measurement: &PointCloud,
    initial_rotation: &Rotation3<f64>,
    config: &CpdConfig,
) -> Result<RegistrationResult> {
    config.validate()?;
    check_rotation(initial_rotation)?;

    let xs = reference.vectors();
    let ys = measurement.vectors();
    let (cx, spread_x) = centre(&xs);
    let (cy, spread_y) = centre(&ys);
    if !(spread_x > 0.0) || !(spread_y > 0.0) {
        return Err(Error::DegenerateGeometry(
            "all points of a cloud coincide".into(),
        ));
    }
    let norm = spread_x;
    let x = normalised(&xs, &cx, norm);
    let y = normalised(&ys, &cy, norm);
    let w = config.outlier_weight;

    let mut params = Params {
        scale: 1.0,
        rotation: *initial_rotation.matrix(),
        translation: Vector3::zeros(),
        // Both clouds are centred, so the pooled mean squared distance
        // reduces to the sum of the two spreads.
        sigma2: ((spread_x / norm).powi(2) + (spread_y / norm).powi(2)) / DIM,
    };
    let mut moved = vec![[0.0; 3]; y.len()];
    move_points(&y, &params, &mut moved);
    let mut e = e_step(&x, &y, &moved, params.sigma2, w);
    let mut spare = EStep::with_shape(x.len(), y.len());
    let mut history = vec![e.nll];
    let mut iterations = 0;

    while iterations < config.max_iterations {
        let Some(next) = m_step(&x, &y, &e, config) else {
            break;
        };
        params = next;
        move_points(&y, &params, &mut moved);
        e_step_into(&x, &y, &moved, params.sigma2, w, &mut spare);
        iterations += 1;
        let change = (e.nll - spare.nll).abs();
        history.push(spare.nll);
        std::mem::swap(&mut e, &mut spare);
        if change <= config.tolerance * e.nll.abs() {
            break;
        }
    }

    // Back to nanometres: x = s·R·(y − cy) + norm·t̂ + cx.
    let rotation = Rotation3::from_matrix_unchecked(params.rotation);
    let translation = cx + params.translation * norm - rotation * cy * params.scale;
    Ok(RegistrationResult {
        transform: RigidTransform::new(params.scale, rotation, translation),
        posterior: e.posterior,
        iterations_used: iterations,
        final_objective: e.nll,
        objective_history: history,
        sigma2_nm2: params.sigma2 * norm * norm,
    })
}

/// Posterior of `reference` against points already mapped into the reference
/// frame, for a given mixture variance in nm².
pub fn posterior_for_aligned(
    reference: &PointCloud,
    aligned: &[Vector3<f64>],
    sigma2_nm2: f64,
    outlier_weight: f64,
) -> Result<Posterior> {
    if aligned.is_empty() {
        return Err(Error::InvalidArgument("no aligned points".into()));
    }
    if !(sigma2_nm2 > 0.0) || !(0.0..1.0).contains(&outlier_weight) {
        return Err(Error::InvalidArgument(
            "posterior needs σ² > 0 and an outlier weight in [0, 1)".into(),
        ));
    }
    let x: Vec<V3> = reference.vectors().iter().map(|v| [v.x, v.y, v.z]).collect();
    let y: Vec<V3> = aligned.iter().map(|v| [v.x, v.y, v.z]).collect();
    Ok(e_step(&x, &y, &y, sigma2_nm2, outlier_weight).posterior)
}

/// Angle-axis vector of the centre of every subcube when `[−π, π]³` is split
/// into `divisions³` equal cells, in row-major order (x slowest).
pub fn subcube_centres(divisions: usize) -> Vec<Vector3<f64>> {
    let d = divisions as f64;
    let step = 2.0 * std::f64::consts::PI / d;
    let centre = |k: usize| -std::f64::consts::PI + (k as f64 + 0.5) * step;
    let mut out = Vec::with_capacity(divisions.pow(3));
    for i in 0..divisions {
        for j in 0..divisions {
            for k in 0..divisions {
                out.push(Vector3::new(centre(i), centre(j), centre(k)));
            }
        }
    }
    out
}

/// Initial rotations for the subcube search.
pub fn decompose_rotation_space(divisions_per_axis: usize) -> Result<Vec<Rotation3<f64>>> {
    if divisions_per_axis == 0 {
        return Err(Error::InvalidArgument("divisions_per_axis must be at least 1".into()));
    }
    Ok(subcube_centres(divisions_per_axis)
        .into_iter()
        .map(|v| {
            // Rounding leaves ~1e-16 for the central cell; snap it to zero.
            let v = if v.norm() < 1e-12 { Vector3::zeros() } else { v };
            Rotation3::new(v)
        })
        .collect())
}
