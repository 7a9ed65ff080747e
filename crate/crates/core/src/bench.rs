//! Synthetic experiments: many reference/measurement pairs per label size,
//! verified and summarised.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::{generate_reference, synthesize_measurement, LabelKind, MeasurementSpec, PointCloud};
use crate::rng;
use crate::verify::{verify, VerifyConfig};

pub const BEAD_SIZES: [usize; 9] = [25, 30, 35, 40, 45, 50, 60, 75, 100];
pub const ROD_SIZES: [usize; 9] = [24, 30, 34, 40, 44, 50, 60, 74, 100];
pub const BEAD_FORGERY_GRADES: [f64; 6] = [0.0, 1.0, 5.0, 15.0, 25.0, 50.0];
pub const ROD_FORGERY_GRADES: [f64; 5] = [0.0, 1.0, 5.0, 25.0, 50.0];

/// Contamination fractions are drawn uniformly from this range per trial.
pub const CONTAMINATION_RANGE: (f64, f64) = (0.1, 0.2);

const HISTOGRAM_BINS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Pose change only.
    Lab,
    /// Pose, lost points and artifacts.
    ArtLost,
    /// Pose, lost points, artifacts and positional noise.
    Noisy,
    /// A noisy measurement of a different label of the same size.
    WrongLabel,
    /// `Noisy` plus an extra placement error in nm.
    Forgery(f64),
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scenario::Lab => f.write_str("lab"),
            Scenario::ArtLost => f.write_str("artlost"),
            Scenario::Noisy => f.write_str("noisy"),
            Scenario::WrongLabel => f.write_str("wrong"),
            Scenario::Forgery(g) => write!(f, "forgery:{g}"),
        }
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lab" => Ok(Scenario::Lab),
            "artlost" => Ok(Scenario::ArtLost),
            "noisy" => Ok(Scenario::Noisy),
            "wrong" => Ok(Scenario::WrongLabel),
            _ => {
                let g = s
                    .strip_prefix("forgery:")
                    .and_then(|g| g.parse::<f64>().ok())
                    .filter(|g| g.is_finite() && *g >= 0.0)
                    .ok_or_else(|| {
                        Error::InvalidArgument(format!(
                            "unknown scenario {s:?}; expected lab, artlost, noisy, wrong or forgery:<nm>"
                        ))
                    })?;
                Ok(Scenario::Forgery(g))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub kind: LabelKind,
    pub sizes: Vec<usize>,
    pub references_per_size: usize,
    pub measurements_per_reference: usize,
    pub scenario: Scenario,
    pub seed: u64,
    /// Trials verified concurrently.
    pub workers: usize,
    pub verify: VerifyConfig,
}

impl ExperimentPlan {
    /// Nine sizes, ten references per size, ten measurements per reference.
    pub fn full_grid(kind: LabelKind, scenario: Scenario, seed: u64) -> Self {
        Self {
            kind,
            sizes: grid_sizes(kind).to_vec(),
            references_per_size: 10,
            measurements_per_reference: 10,
            scenario,
            seed,
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            verify: VerifyConfig {
                max_parallel: 1,
                ..VerifyConfig::default()
            },
        }
    }

    pub fn trial_count(&self) -> usize {
        self.sizes.len() * self.references_per_size * self.measurements_per_reference
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::InvalidArgument("workers must be at least 1".into()));
        }
        if self.kind == LabelKind::Rods {
            if let Some(n) = self.sizes.iter().find(|&&n| n % 2 != 0) {
                return Err(Error::InvalidArgument(format!("rod label size {n} is odd")));
            }
        }
        if let Scenario::Forgery(g) = self.scenario {
            if !(g.is_finite() && g >= 0.0) {
                return Err(Error::InvalidArgument(format!("forgery grade {g} is invalid")));
            }
        }
        self.verify.validate()
    }
}

pub fn grid_sizes(kind: LabelKind) -> &'static [usize; 9] {
    match kind {
        LabelKind::Beads => &BEAD_SIZES,
        LabelKind::Rods => &ROD_SIZES,
    }
}

pub fn forgery_grades(kind: LabelKind) -> &'static [f64] {
    match kind {
        LabelKind::Beads => &BEAD_FORGERY_GRADES,
        LabelKind::Rods => &ROD_FORGERY_GRADES,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub size: usize,
    pub reference_index: usize,
    pub measurement_index: usize,
    pub measurement_points: usize,
    pub fraction: f64,
    pub equal: bool,
    pub size_rejected: bool,
    pub best_subcube: Option<usize>,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeSummary {
    pub size: usize,
    pub trials: usize,
    pub median: f64,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSummary {
    pub size: usize,
    pub reference_index: usize,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub trial_count: usize,
    pub median: f64,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    /// Share of trials with fraction exactly 1.
    pub perfect_share: f64,
    pub below_0_1_share: f64,
    pub below_0_5_share: f64,
    pub at_least_0_7_share: f64,
    /// Share of trials accepted as equal.
    pub accept_share: f64,
    /// Counts per 10 % bin; the last bin includes 1.0.
    pub histogram: [usize; HISTOGRAM_BINS],
    pub per_size: Vec<SizeSummary>,
    pub per_reference: Vec<ReferenceSummary>,
    pub median_verify_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub plan: ExperimentPlan,
    pub summary: Summary,
    pub trials: Vec<TrialRecord>,
}

fn sorted(values: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.into_iter().collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Median of already sorted values; the mean of the two middle values for
/// even lengths.
fn median_sorted(v: &[f64]) -> f64 {
    match v.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => v[n / 2],
        n => (v[n / 2 - 1] + v[n / 2]) / 2.0,
    }
}

pub fn median(values: impl IntoIterator<Item = f64>) -> f64 {
    median_sorted(&sorted(values))
}

/// Nearest-rank percentile of already sorted values.
fn percentile_sorted(v: &[f64], q: f64) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let rank = (q * v.len() as f64).ceil().max(1.0) as usize;
    v[rank.min(v.len()) - 1]
}

pub fn histogram_bin(fraction: f64) -> usize {
    // Fractions are ratios of small integers; the nudge keeps 0.3 in bin 3.
    ((fraction * HISTOGRAM_BINS as f64 + 1e-9).floor() as usize).min(HISTOGRAM_BINS - 1)
}

fn share(trials: &[TrialRecord], pred: impl Fn(&TrialRecord) -> bool) -> f64 {
    if trials.is_empty() {
        return f64::NAN;
    }
    trials.iter().filter(|t| pred(t)).count() as f64 / trials.len() as f64
}

pub fn summarise(trials: &[TrialRecord]) -> Summary {
    let fractions = sorted(trials.iter().map(|t| t.fraction));
    let mut histogram = [0; HISTOGRAM_BINS];
    for f in &fractions {
        histogram[histogram_bin(*f)] += 1;
    }

    let mut sizes: Vec<usize> = trials.iter().map(|t| t.size).collect();
    sizes.sort_unstable();
    sizes.dedup();
    let per_size = sizes
        .iter()
        .map(|&size| {
            let v = sorted(trials.iter().filter(|t| t.size == size).map(|t| t.fraction));
            SizeSummary {
                size,
                trials: v.len(),
                median: median_sorted(&v),
                mean: v.iter().sum::<f64>() / v.len() as f64,
                min: v[0],
                max: v[v.len() - 1],
            }
        })
        .collect();

    let mut refs: Vec<(usize, usize)> = trials.iter().map(|t| (t.size, t.reference_index)).collect();
    refs.sort_unstable();
    refs.dedup();
    let per_reference = refs
        .iter()
        .map(|&(size, reference_index)| {
            let v = sorted(
                trials
                    .iter()
                    .filter(|t| t.size == size && t.reference_index == reference_index)
                    .map(|t| t.fraction),
            );
            ReferenceSummary {
                size,
                reference_index,
                median: median_sorted(&v),
                min: v[0],
                max: v[v.len() - 1],
            }
        })
        .collect();

    Summary {
        trial_count: trials.len(),
        median: median_sorted(&fractions),
        mean: fractions.iter().sum::<f64>() / fractions.len() as f64,
        min: fractions.first().copied().unwrap_or(f64::NAN),
        max: fractions.last().copied().unwrap_or(f64::NAN),
        perfect_share: share(trials, |t| t.fraction == 1.0),
        below_0_1_share: share(trials, |t| t.fraction < 0.1),
        below_0_5_share: share(trials, |t| t.fraction < 0.5),
        at_least_0_7_share: share(trials, |t| t.fraction >= 0.7),
        accept_share: share(trials, |t| t.equal),
        histogram,
        per_size,
        per_reference,
        median_verify_ms: median(trials.iter().map(|t| t.elapsed_ms)),
    }
}

const TAG_REFERENCE: u64 = 1;
const TAG_MEASUREMENT: u64 = 2;
const TAG_CONTAMINATION: u64 = 3;
const TAG_OTHER_LABEL: u64 = 4;

fn kind_tag(kind: LabelKind) -> u64 {
    match kind {
        LabelKind::Beads => 0,
        LabelKind::Rods => 1,
    }
}

/// Measurement settings of one trial. The scenario does not enter any seed,
/// so two scenarios differ only in the stages they switch on.
fn measurement_spec(scenario: Scenario, seed: u64) -> MeasurementSpec {
    let mut spec = MeasurementSpec::lab(seed);
    if scenario == Scenario::Lab {
        return spec;
    }
    let mut draw = rng::stream(rng::derive(seed, &[TAG_CONTAMINATION]), 0);
    let (lo, hi) = CONTAMINATION_RANGE;
    spec.lost_fraction = draw.gen_range(lo..=hi);
    spec.artifact_fraction = draw.gen_range(lo..=hi);
    spec.noise_enabled = scenario != Scenario::ArtLost;
    if let Scenario::Forgery(g) = scenario {
        spec.forgery_grade_nm = g;
    }
    spec
}

fn trial_inputs(
    plan: &ExperimentPlan,
    size: usize,
    reference_index: usize,
    measurement_index: usize,
) -> Result<(PointCloud, PointCloud)> {
    let base = [kind_tag(plan.kind), size as u64, reference_index as u64];
    let reference = generate_reference(
        plan.kind,
        size,
        rng::derive(plan.seed, &[TAG_REFERENCE, base[0], base[1], base[2]]),
    )?;
    let path = [base[0], base[1], base[2], measurement_index as u64];
    let measurement_seed = rng::derive(plan.seed, &[TAG_MEASUREMENT, path[0], path[1], path[2], path[3]]);
    let source = if plan.scenario == Scenario::WrongLabel {
        generate_reference(
            plan.kind,
            size,
            rng::derive(plan.seed, &[TAG_OTHER_LABEL, path[0], path[1], path[2], path[3]]),
        )?
    } else {
        reference.clone()
    };
    let scenario = match plan.scenario {
        Scenario::WrongLabel => Scenario::Noisy,
        s => s,
    };
    let measurement = synthesize_measurement(&source, &measurement_spec(scenario, measurement_seed))?;
    Ok((reference, measurement.cloud))
}

/// Builds the reference and measurement of one trial exactly as
/// [`run_experiment`] does.
pub fn trial_pair(
    plan: &ExperimentPlan,
    size: usize,
    reference_index: usize,
    measurement_index: usize,
) -> Result<(PointCloud, PointCloud)> {
    plan.validate()?;
    trial_inputs(plan, size, reference_index, measurement_index)
}

fn run_trial(plan: &ExperimentPlan, size: usize, r: usize, m: usize) -> Result<TrialRecord> {
    let (reference, measurement) = trial_inputs(plan, size, r, m)?;
    let verdict = verify(&reference, &measurement, &plan.verify)?;
    Ok(TrialRecord {
        size,
        reference_index: r,
        measurement_index: m,
        measurement_points: measurement.len(),
        fraction: verdict.best_fraction,
        equal: verdict.equal,
        size_rejected: verdict.size_rejected,
        best_subcube: verdict.best_subcube_index,
        elapsed_ms: verdict.elapsed.as_secs_f64() * 1e3,
    })
}

/// Runs every trial of `plan`. Results are in grid order whatever the
/// worker count.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<ExperimentReport> {
    plan.validate()?;
    let jobs: Vec<(usize, usize, usize)> = plan
        .sizes
        .iter()
        .flat_map(|&size| {
            (0..plan.references_per_size).flat_map(move |r| {
                (0..plan.measurements_per_reference).map(move |m| (size, r, m))
            })
        })
        .collect();
    let trials: Vec<Result<TrialRecord>> = if plan.workers == 1 {
        jobs.iter().map(|&(n, r, m)| run_trial(plan, n, r, m)).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(plan.workers)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
        pool.install(|| jobs.par_iter().map(|&(n, r, m)| run_trial(plan, n, r, m)).collect())
    };
    let trials = trials.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(ExperimentReport {
        plan: plan.clone(),
        summary: summarise(&trials),
        trials,
    })
}

impl ExperimentReport {
    /// Same plan, fractions and verdicts; timings are ignored.
    pub fn same_outcome(&self, other: &ExperimentReport) -> bool {
        let strip = |t: &TrialRecord| TrialRecord {
            elapsed_ms: 0.0,
            ..t.clone()
        };
        self.plan == other.plan
            && self.trials.len() == other.trials.len()
            && self.trials.iter().zip(&other.trials).all(|(a, b)| strip(a) == strip(b))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for t in &self.trials {
            w.serialize(t).map_err(io_error)?;
        }
        w.flush().map_err(|e| io_error(e.into()))
    }

    pub fn write_summary_json<W: Write>(&self, out: W) -> Result<()> {
        #[derive(Serialize)]
        struct Doc<'a> {
            plan: &'a ExperimentPlan,
            summary: &'a Summary,
        }
        serde_json::to_writer_pretty(
            out,
            &Doc {
                plan: &self.plan,
                summary: &self.summary,
            },
        )
        .map_err(|e| Error::InvalidArgument(format!("writing summary: {e}")))
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| io_error(e.into()))?;
        let create = |ext: &str| {
            std::fs::File::create(dir.join(format!("{stem}.{ext}"))).map_err(|e| io_error(e.into()))
        };
        self.write_csv(create("csv")?)?;
        self.write_summary_json(std::io::BufWriter::new(create("json")?))
    }
}

fn io_error(e: csv::Error) -> Error {
    Error::InvalidArgument(format!("writing report: {e}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub size: usize,
    pub repetitions: usize,
    pub median_ms: f64,
    pub p95_ms: f64,
}

/// Wall-clock of [`verify`] on noisy bead measurements, one fresh pair per
/// repetition.
pub fn run_timing(
    sizes: &[usize],
    repetitions: usize,
    seed: u64,
    config: &VerifyConfig,
) -> Result<Vec<TimingRow>> {
    if repetitions == 0 {
        return Ok(Vec::new());
    }
    config.validate()?;
    let plan = ExperimentPlan {
        kind: LabelKind::Beads,
        sizes: sizes.to_vec(),
        references_per_size: repetitions,
        measurements_per_reference: 1,
        scenario: Scenario::Noisy,
        seed,
        workers: 1,
        verify: *config,
    };
    plan.validate()?;
    sizes
        .iter()
        .map(|&size| {
            let mut ms = Vec::with_capacity(repetitions);
            for r in 0..repetitions {
                let (reference, measurement) = trial_inputs(&plan, size, r, 0)?;
                let start = Instant::now();
                verify(&reference, &measurement, config)?;
                ms.push(start.elapsed().as_secs_f64() * 1e3);
            }
            let ms = sorted(ms);
            Ok(TimingRow {
                size,
                repetitions,
                median_ms: median_sorted(&ms),
                p95_ms: percentile_sorted(&ms, 0.95),
            })
        })
        .collect()
}

pub fn write_timing_csv<W: Write>(rows: &[TimingRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["size", "median_ms", "p95_ms"]).map_err(io_error)?;
    for r in rows {
        w.write_record([
            r.size.to_string(),
            format!("{:.3}", r.median_ms),
            format!("{:.3}", r.p95_ms),
        ])
        .map_err(io_error)?;
    }
    w.flush().map_err(|e| io_error(e.into()))
}
