use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use nanolabel::bench::{self, ExperimentPlan, Scenario};
use nanolabel::label::GeneratorConfig;
use nanolabel::payload::{self, Payload};
use nanolabel::{
    KeyPair, LabelKind, MeasurementSpec, PayloadA, PointCloud, PublicKey, Verdict, VerifyConfig,
};

#[derive(Parser)]
#[command(name = "nanolabel", version, about = "Generate, verify and sign nano point-cloud labels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random reference label.
    Generate(GenerateArgs),
    /// Derive a synthetic measurement from a reference.
    Measure(MeasureArgs),
    /// Decide whether a measurement belongs to a reference (exit 0 equal, 1 not equal, 2 error).
    Verify(VerifyArgs),
    /// Build both QR payloads for a reference.
    Encode(EncodeArgs),
    /// Parse payloads back into a cloud, optionally checking the signature.
    Decode(DecodeArgs),
    /// Create a P-256 key pair.
    Keygen(KeygenArgs),
    /// Sign a payload A together with product information.
    Sign(SignArgs),
    /// Check a signature (exit 0 valid, 1 invalid, 2 error).
    VerifySig(VerifySigArgs),
    /// Run a synthetic experiment and write per-trial CSV plus a JSON summary.
    Bench(BenchArgs),
    /// Measure verification wall-clock per label size.
    Timing(TimingArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value = "beads")]
    kind: LabelKind,
    #[arg(long, default_value_t = 50)]
    points: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Shortest rod in nm.
    #[arg(long, default_value_t = GeneratorConfig::default().rod_length_nm.0)]
    rod_min: f64,
    /// Longest rod in nm.
    #[arg(long, default_value_t = GeneratorConfig::default().rod_length_nm.1)]
    rod_max: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MeasureArgs {
    #[arg(long)]
    reference: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20.0)]
    rotation_deg: f64,
    #[arg(long, default_value_t = 0.0)]
    lost: f64,
    #[arg(long, default_value_t = 0.0)]
    artifacts: f64,
    #[arg(long)]
    noise: bool,
    /// Extra placement error in nm.
    #[arg(long, default_value_t = 0.0)]
    forgery: f64,
    #[arg(long, default_value_t = 100_000)]
    translation: i64,
    #[arg(long)]
    out: PathBuf,
    /// Also write the ground-truth transform and point origins.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    reference: PathBuf,
    #[arg(long)]
    measurement: PathBuf,
    #[arg(long, default_value_t = VerifyConfig::default().match_threshold)]
    threshold: f64,
    #[arg(long, default_value_t = VerifyConfig::default().divisions_per_axis)]
    divisions: usize,
    #[arg(long, default_value_t = VerifyConfig::default().max_size_deviation)]
    max_size_deviation: f64,
    /// Concurrent registrations; defaults to the number of CPUs.
    #[arg(long)]
    parallel: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    cloud: PathBuf,
    /// Product information, Latin-1 text; one trailing newline is dropped.
    #[arg(long)]
    info: PathBuf,
    #[arg(long)]
    key: PathBuf,
    #[arg(long)]
    out_a: PathBuf,
    #[arg(long)]
    out_b: PathBuf,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: Option<PathBuf>,
    /// Public key used to check the signature in payload B.
    #[arg(long = "pub", requires = "b")]
    public: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct KeygenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long = "pub")]
    public: PathBuf,
    /// Deterministic key for tests; omit for OS entropy.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SignArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    info: PathBuf,
    #[arg(long)]
    key: PathBuf,
    /// DER signature output.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VerifySigArgs {
    #[arg(long)]
    a: PathBuf,
    /// Payload B carrying product info and signature.
    #[arg(long, conflicts_with_all = ["info", "sig"])]
    b: Option<PathBuf>,
    #[arg(long, requires = "sig")]
    info: Option<PathBuf>,
    #[arg(long, requires = "info")]
    sig: Option<PathBuf>,
    #[arg(long = "pub")]
    public: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value = "beads")]
    kind: LabelKind,
    /// lab, artlost, noisy, wrong or forgery:<nm>
    #[arg(long, default_value = "lab")]
    scenario: Scenario,
    /// Nine sizes with ten references and ten measurements each.
    #[arg(long, alias = "paper-grid")]
    full_grid: bool,
    #[arg(long, value_delimiter = ',', conflicts_with = "full_grid")]
    sizes: Option<Vec<usize>>,
    #[arg(long, default_value_t = 10)]
    refs: usize,
    #[arg(long, default_value_t = 10)]
    meas: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long)]
    parallel: Option<usize>,
    /// Output directory for `<kind>_<scenario>.csv` and `.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TimingArgs {
    #[arg(long, value_delimiter = ',', default_value = "25,35,50,60,75,100")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Concurrent registrations inside one verification.
    #[arg(long)]
    parallel: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read_cloud(path: &Path) -> Result<PointCloud> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn read_info(path: &Path) -> Result<String> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let text = text.strip_suffix('\n').unwrap_or(&text);
    Ok(text.strip_suffix('\r').unwrap_or(text).to_owned())
}

fn read_payload_a(path: &Path) -> Result<PayloadA> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(PayloadA::parse(text.trim())?)
}

fn default_parallel() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn generate(args: GenerateArgs) -> Result<()> {
    let config = GeneratorConfig {
        rod_length_nm: (args.rod_min, args.rod_max),
    };
    let cloud = nanolabel::label::generate_reference_with(args.kind, args.points, args.seed, &config)?;
    write_json(&args.out, &cloud)?;
    println!("wrote {} {} points to {}", cloud.len(), cloud.kind(), args.out.display());
    Ok(())
}

fn measure(args: MeasureArgs) -> Result<()> {
    let reference = read_cloud(&args.reference)?;
    let spec = MeasurementSpec {
        rotation_deg_max: args.rotation_deg,
        lost_fraction: args.lost,
        artifact_fraction: args.artifacts,
        noise_enabled: args.noise,
        forgery_grade_nm: args.forgery,
        translation_max_nm: args.translation,
        seed: args.seed,
    };
    let m = nanolabel::synthesize_measurement(&reference, &spec)?;
    write_json(&args.out, &m.cloud)?;
    if let Some(path) = &args.truth {
        write_json(path, &m)?;
    }
    println!(
        "wrote {} points ({} artifacts) to {}",
        m.cloud.len(),
        m.artifact_count(),
        args.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct VerdictFile<'a> {
    #[serde(flatten)]
    verdict: &'a Verdict,
    config: &'a VerifyConfig,
}

fn verify(args: VerifyArgs) -> Result<bool> {
    let reference = read_cloud(&args.reference)?;
    let measurement = read_cloud(&args.measurement)?;
    let config = VerifyConfig {
        match_threshold: args.threshold,
        divisions_per_axis: args.divisions,
        max_size_deviation: args.max_size_deviation,
        max_parallel: args.parallel.unwrap_or_else(default_parallel),
        ..VerifyConfig::default()
    };
    let verdict = nanolabel::verify(&reference, &measurement, &config)?;
    if let Some(path) = &args.out {
        write_json(
            path,
            &VerdictFile {
                verdict: &verdict,
                config: &config,
            },
        )?;
    }
    if verdict.size_rejected {
        println!("not equal: point counts differ too much ({} vs {})", reference.len(), measurement.len());
    } else {
        println!(
            "{}: best fraction {:.3} in subcube {} ({:.0} ms)",
            if verdict.equal { "equal" } else { "not equal" },
            verdict.best_fraction,
            verdict.best_subcube_index.unwrap_or_default(),
            verdict.elapsed.as_secs_f64() * 1e3
        );
    }
    Ok(verdict.equal)
}

fn encode(args: EncodeArgs) -> Result<()> {
    let cloud = read_cloud(&args.cloud)?;
    let info = read_info(&args.info)?;
    let key = KeyPair::load(&args.key)?;
    let a = nanolabel::encode_payload_a(&cloud)?;
    let signature = nanolabel::sign(&a, &info, &key)?;
    let b = nanolabel::encode_payload_b(&info, signature.as_bytes())?;
    fs::write(&args.out_a, a.digits()).with_context(|| format!("writing {}", args.out_a.display()))?;
    fs::write(&args.out_b, b.to_bytes()).with_context(|| format!("writing {}", args.out_b.display()))?;
    println!(
        "payload A: {} digits (numeric mode, {} data bits), print at {:.2} cm",
        a.digits().len(),
        a.numeric_mode_bits(),
        payload::recommended_print_side_cm(Payload::A(&a))
    );
    println!(
        "payload B: {} bytes (byte mode), print at {:.2} cm",
        b.to_bytes().len(),
        payload::recommended_print_side_cm(Payload::B(&b))
    );
    Ok(())
}

fn decode(args: DecodeArgs) -> Result<bool> {
    let a = read_payload_a(&args.a)?;
    let cloud = nanolabel::decode_payload_a(&a)?;
    write_json(&args.out, &cloud)?;
    println!("decoded {} {} points", cloud.len(), cloud.kind());
    let Some(b_path) = &args.b else {
        return Ok(true);
    };
    let bytes = fs::read(b_path).with_context(|| format!("reading {}", b_path.display()))?;
    let b = nanolabel::decode_payload_b(&bytes)?;
    println!("product info: {}", b.product_info());
    let Some(pub_path) = &args.public else {
        return Ok(true);
    };
    let valid = nanolabel::verify_signature(&a, b.product_info(), b.signature(), &PublicKey::load(pub_path)?);
    println!("signature {}", if valid { "valid" } else { "INVALID" });
    Ok(valid)
}

fn keygen(args: KeygenArgs) -> Result<()> {
    let keys = nanolabel::keygen(args.seed)?;
    keys.save(&args.out, &args.public)?;
    println!("wrote {} and {}", args.out.display(), args.public.display());
    Ok(())
}

fn sign(args: SignArgs) -> Result<()> {
    let a = read_payload_a(&args.a)?;
    let info = read_info(&args.info)?;
    let key = KeyPair::load(&args.key)?;
    let signature = nanolabel::sign(&a, &info, &key)?;
    fs::write(&args.out, signature.as_bytes()).with_context(|| format!("writing {}", args.out.display()))?;
    println!("wrote {}-byte signature to {}", signature.as_bytes().len(), args.out.display());
    Ok(())
}

fn verify_sig(args: VerifySigArgs) -> Result<bool> {
    let a = read_payload_a(&args.a)?;
    let public = PublicKey::load(&args.public)?;
    let (info, signature) = match (&args.b, &args.info, &args.sig) {
        (Some(b), _, _) => {
            let b = nanolabel::decode_payload_b(&fs::read(b).with_context(|| format!("reading {}", b.display()))?)?;
            (b.product_info().to_owned(), b.signature().to_vec())
        }
        (None, Some(info), Some(sig)) => (
            read_info(info)?,
            fs::read(sig).with_context(|| format!("reading {}", sig.display()))?,
        ),
        _ => bail!("pass either --b or both --info and --sig"),
    };
    let valid = nanolabel::verify_signature(&a, &info, &signature, &public);
    println!("signature {}", if valid { "valid" } else { "INVALID" });
    Ok(valid)
}

fn run_bench(args: BenchArgs) -> Result<()> {
    let mut plan = ExperimentPlan::full_grid(args.kind, args.scenario, args.seed);
    if !args.full_grid {
        if let Some(sizes) = args.sizes {
            plan.sizes = sizes;
        }
        plan.references_per_size = args.refs;
        plan.measurements_per_reference = args.meas;
    }
    plan.workers = args.parallel.unwrap_or_else(default_parallel);
    eprintln!("running {} trials ({} {})", plan.trial_count(), plan.kind, plan.scenario);
    let report = bench::run_experiment(&plan)?;
    let s = &report.summary;
    println!("trials        {}", s.trial_count);
    println!("median        {:.3}", s.median);
    println!("mean          {:.3}", s.mean);
    println!("min / max     {:.3} / {:.3}", s.min, s.max);
    println!("share = 1.0   {:.3}", s.perfect_share);
    println!("share >= 0.7  {:.3}", s.at_least_0_7_share);
    println!("share < 0.5   {:.3}", s.below_0_5_share);
    println!("share < 0.1   {:.3}", s.below_0_1_share);
    println!("accepted      {:.3}", s.accept_share);
    println!("histogram     {:?}", s.histogram);
    println!("median ms     {:.1}", s.median_verify_ms);
    if let Some(dir) = &args.out {
        let stem = format!("{}_{}", plan.kind, plan.scenario).replace(':', "_");
        report.save(dir, &stem)?;
        println!("wrote {} and .json", dir.join(format!("{stem}.csv")).display());
    }
    Ok(())
}

fn run_timing(args: TimingArgs) -> Result<()> {
    let config = VerifyConfig {
        max_parallel: args.parallel.unwrap_or_else(default_parallel),
        ..VerifyConfig::default()
    };
    let rows = bench::run_timing(&args.sizes, args.reps, args.seed, &config)?;
    match &args.out {
        Some(path) => {
            let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
            bench::write_timing_csv(&rows, file)?;
        }
        None => bench::write_timing_csv(&rows, std::io::stdout().lock())?,
    }
    Ok(())
}

fn exit_code(result: Result<bool>) -> ExitCode {
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let ok = |r: Result<()>| r.map(|()| true);
    exit_code(match cli.command {
        Command::Generate(a) => ok(generate(a)),
        Command::Measure(a) => ok(measure(a)),
        Command::Verify(a) => verify(a),
        Command::Encode(a) => ok(encode(a)),
        Command::Decode(a) => decode(a),
        Command::Keygen(a) => ok(keygen(a)),
        Command::Sign(a) => ok(sign(a)),
        Command::VerifySig(a) => verify_sig(a),
        Command::Bench(a) => ok(run_bench(a)),
        Command::Timing(a) => ok(run_timing(a)),
    })
}
