//! Command line front end: generate synthetic traces, fit metric pairs,
//! and run stability and sensitivity sweeps over telemetry files.
//!
//! Exit codes: 0 success (for `fit`, verdict `accurate`), 1 usage or input
//! errors, 2 verdict `no_clear_relationship`, 3 verdict `insufficient_data`.
//! Codes 2 and 3 are reserved for verdicts, which is why usage errors exit
//! with 1 rather than clap's default 2.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use afmlens::ingestion::{
    join_series, parse_afm_records, parse_port_records, reaggregate_nlm, Format, JoinReport,
    ParseReport, ReaggregationReport,
};
use afmlens::model::{AfmKind, MetricKind, ModelKind, PipelineConfig, QosClass, Scope};
use afmlens::pipeline::{
    fit_pair, sensitivity_sweep, split_at, stability_sweep, write_plot_csv, PairModelReport,
    SweepGrids, SweepRow, Verdict, WindowReport,
};
use afmlens::synthgen::{emit_files, AfmMode, EmitOptions, GeneratorSpec};

const WEEK_S: f64 = 7.0 * 86400.0;

#[derive(Parser)]
#[command(
    name = "afmlens",
    version,
    about = "Relates network-level utilization metrics to application-facing metrics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic telemetry trace with known ground truth.
    Synth(SynthArgs),
    /// Fit one metric pair from telemetry files and judge the result.
    Fit(FitArgs),
    /// Fit rolling train/test windows to check model stability over time.
    Stability(StabilityArgs),
    /// Grid-sweep asymmetry, curvature, and accuracy thresholds.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Base curve family: linear or queueing.
    #[arg(long, default_value = "queueing")]
    kind: ModelKind,
    /// Curve slope (linear) or queueing intensity.
    #[arg(long, default_value_t = 2.0)]
    beta: f64,
    /// Curve offset.
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    /// Add a quadratic penalty beyond this utilization.
    #[arg(long)]
    knee_x: Option<f64>,
    /// Strength of the beyond-knee penalty.
    #[arg(long, default_value_t = 0.0)]
    penalty_slope: f64,
    /// Multiplicative lognormal noise scale.
    #[arg(long, default_value_t = 0.05)]
    sigma: f64,
    /// Number of sample windows.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Lower edge of the sampled utilization range.
    #[arg(long, default_value_t = 0.05)]
    x_lo: f64,
    /// Upper edge of the sampled utilization range.
    #[arg(long, default_value_t = 0.9)]
    x_hi: f64,
    #[arg(long, default_value = "synth")]
    fabric: String,
    /// Epoch second of the first window; must sit on the window grid.
    #[arg(long, default_value_t = 0)]
    start: i64,
    /// Window length in seconds.
    #[arg(long, default_value_t = 300)]
    window: i64,
    #[arg(long, default_value = "high")]
    qos: QosClass,
    /// fabric | block:<name>
    #[arg(long, default_value = "fabric")]
    scope: Scope,
    /// Network metric the trace is labeled with.
    #[arg(long, default_value = "mlu")]
    nlm: MetricKind,
    /// Application metric the trace is labeled with.
    #[arg(long, default_value = "transmit_latency:64KiB:p99")]
    afm: AfmKind,
    /// Output file format: csv or jsonl.
    #[arg(long, default_value = "csv")]
    format: Format,
    /// Application metric payload: scalar or sketch.
    #[arg(long, default_value = "scalar")]
    afm_mode: AfmMode,
    /// Port-counter output file.
    #[arg(long)]
    out_nlm: PathBuf,
    /// Application metric output file.
    #[arg(long)]
    out_afm: PathBuf,
    /// Omit timestamps so repeated runs emit identical bytes.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Args)]
struct InputArgs {
    /// Port-counter telemetry file.
    #[arg(long)]
    nlm_file: PathBuf,
    /// Application metric file.
    #[arg(long)]
    afm_file: PathBuf,
    /// Input format of both files: csv or jsonl.
    #[arg(long, default_value = "csv")]
    format: Format,
    /// Reaggregation window in seconds.
    #[arg(long, default_value_t = 300)]
    window: i64,
    /// Network metric to compute (mlu, alu, mau, aau, jain, p5_p95_distance, p<k>_lu, ...).
    #[arg(long, default_value = "mlu")]
    nlm: MetricKind,
    /// Application metric series to join (e.g. transmit_latency:64KiB:p99, delivery_rate:p1).
    #[arg(long, default_value = "transmit_latency:64KiB:p99")]
    afm: AfmKind,
    /// Traffic class the joined series belongs to.
    #[arg(long, default_value = "high")]
    qos: QosClass,
    /// fabric | block:<name>
    #[arg(long, default_value = "fabric")]
    scope: Scope,
}

#[derive(Args)]
struct ConfigArgs {
    /// Envelope and bucket target quantile; defaults to 0.95.
    #[arg(long)]
    tau: Option<f64>,
    /// Overprediction weight of the fitting loss; defaults to 0.5.
    #[arg(long)]
    alpha: Option<f64>,
    /// Knee curvature threshold; defaults to 0.5.
    #[arg(long)]
    curvature: Option<f64>,
    /// Accuracy verdict threshold on test error; defaults to 0.15.
    #[arg(long)]
    threshold: Option<f64>,
    /// Bucket count; defaults to 20 (100 for mean-type network metrics).
    #[arg(long)]
    buckets: Option<usize>,
    /// Minimum samples a bucket needs to count; defaults to 10.
    #[arg(long)]
    min_bucket_samples: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self, nlm: MetricKind, afm: &AfmKind) -> PipelineConfig {
        let mut cfg = PipelineConfig::default_for_pair(nlm, afm);
        if let Some(v) = self.tau {
            cfg.target_quantile = v;
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = self.curvature {
            cfg.curvature_threshold = v;
        }
        if let Some(v) = self.threshold {
            cfg.error_threshold = v;
        }
        if let Some(v) = self.buckets {
            cfg.n_buckets = v;
        }
        if let Some(v) = self.min_bucket_samples {
            cfg.min_bucket_samples = v;
        }
        cfg
    }
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Epoch second separating training from test windows; defaults to the
    /// median window start.
    #[arg(long)]
    train_end: Option<i64>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the envelope-versus-model curve as CSV.
    #[arg(long)]
    plot_csv: Option<PathBuf>,
    /// Omit timestamps so repeated runs emit identical bytes.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Args)]
struct StabilityArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Training span per window, in weeks.
    #[arg(long, default_value_t = 4.0)]
    train_weeks: f64,
    /// Test span per window, in weeks.
    #[arg(long, default_value_t = 2.0)]
    test_weeks: f64,
    /// Offset between consecutive windows, in weeks.
    #[arg(long, default_value_t = 2.0)]
    step_weeks: f64,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Omit timestamps so repeated runs emit identical bytes.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Epoch second separating training from test windows; defaults to the
    /// median window start.
    #[arg(long)]
    train_end: Option<i64>,
    /// Comma-separated asymmetry weights to sweep.
    #[arg(long, value_delimiter = ',')]
    alphas: Vec<f64>,
    /// Comma-separated curvature thresholds to sweep.
    #[arg(long, value_delimiter = ',')]
    curvatures: Vec<f64>,
    /// Comma-separated accuracy thresholds to judge each cell against.
    #[arg(long, value_delimiter = ',')]
    thresholds: Vec<f64>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Omit timestamps so repeated runs emit identical bytes.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Serialize)]
struct FileDigest {
    path: String,
    bytes: u64,
    sha256: String,
}

#[derive(Serialize)]
struct RunManifest {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    generated_at_epoch_s: Option<u64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    inputs: Vec<FileDigest>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    outputs: Vec<FileDigest>,
}

impl RunManifest {
    fn new(command: &'static str, deterministic: bool) -> Self {
        let generated_at_epoch_s = (!deterministic).then(|| {
            SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .unwrap_or_default()
                .as_secs()
        });
        Self {
            tool: "afmlens",
            version: env!("CARGO_PKG_VERSION"),
            command,
            generated_at_epoch_s,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }
}

fn digest_file(path: &Path) -> Result<FileDigest> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(FileDigest {
        path: path.display().to_string(),
        bytes: bytes.len() as u64,
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

/// Everything ingestion observed on the way to the joined series.
#[derive(Serialize)]
struct IngestSummary {
    nlm_parse: ParseReport,
    afm_parse: ParseReport,
    reaggregation: ReaggregationReport,
    join: JoinReport,
}

struct LoadedPair {
    samples: Vec<afmlens::model::JoinedSample>,
    ingest: IngestSummary,
}

fn load_pair(input: &InputArgs) -> Result<LoadedPair> {
    let nlm_bytes = fs::read(&input.nlm_file)
        .with_context(|| format!("reading {}", input.nlm_file.display()))?;
    let (ports, nlm_parse) = parse_port_records(nlm_bytes.as_slice(), input.format)
        .with_context(|| format!("parsing {}", input.nlm_file.display()))?;
    let afm_bytes = fs::read(&input.afm_file)
        .with_context(|| format!("reading {}", input.afm_file.display()))?;
    let (afm, afm_parse) = parse_afm_records(afm_bytes.as_slice(), input.format)
        .with_context(|| format!("parsing {}", input.afm_file.display()))?;
    if nlm_parse.rows_ok == 0 {
        bail!("{} has no usable rows", input.nlm_file.display());
    }
    if afm_parse.rows_ok == 0 {
        bail!("{} has no usable rows", input.afm_file.display());
    }
    let (points, reaggregation) =
        reaggregate_nlm(&ports, input.window, input.qos, &input.scope, &[input.nlm])?;
    let (samples, join) = join_series(&points, &afm, input.nlm, input.afm)?;
    if samples.is_empty() {
        bail!(
            "joining {} with {} produced no samples for {}/{}/{}",
            input.nlm_file.display(),
            input.afm_file.display(),
            input.scope,
            input.qos,
            input.nlm,
        );
    }
    Ok(LoadedPair {
        samples,
        ingest: IngestSummary {
            nlm_parse,
            afm_parse,
            reaggregation,
            join,
        },
    })
}

fn split_train_test(
    samples: &[afmlens::model::JoinedSample],
    train_end: Option<i64>,
) -> Result<(
    Vec<afmlens::model::JoinedSample>,
    Vec<afmlens::model::JoinedSample>,
    i64,
)> {
    let epoch = train_end.unwrap_or_else(|| samples[samples.len() / 2].window_start);
    let (train, test) = split_at(samples, epoch);
    if train.is_empty() || test.is_empty() {
        bail!(
            "train end {epoch} leaves {} training and {} test samples; both sides need data",
            train.len(),
            test.len()
        );
    }
    Ok((train, test, epoch))
}

/// Writes `value` as pretty JSON to `out` if given, else to stdout.
fn emit_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let mut json = serde_json::to_string_pretty(value)?;
    json.push('\n');
    match out {
        Some(path) => {
            fs::write(path, json).with_context(|| format!("writing {}", path.display()))?;
        }
        None => {
            std::io::stdout().write_all(json.as_bytes())?;
        }
    }
    Ok(())
}

fn verdict_exit(verdict: Verdict) -> u8 {
    match verdict {
        Verdict::Accurate => 0,
        Verdict::NoClearRelationship => 2,
        Verdict::InsufficientData => 3,
    }
}

#[derive(Serialize)]
struct SynthOutput {
    manifest: RunManifest,
    spec: GeneratorSpec,
    samples: usize,
}

fn run_synth(args: SynthArgs) -> Result<u8> {
    let spec = GeneratorSpec {
        kind: args.kind,
        beta: args.beta,
        c: args.c,
        knee_x: args.knee_x,
        penalty_slope: args.penalty_slope,
        sigma: args.sigma,
        n: args.n,
        seed: args.seed,
        x_lo: args.x_lo,
        x_hi: args.x_hi,
        fabric: args.fabric.clone(),
        start_epoch_s: args.start,
        window_len_s: args.window,
        qos: args.qos,
        scope: args.scope.clone(),
        nlm_kind: args.nlm,
        afm_kind: args.afm,
    };
    let samples = spec.generate()?;
    let nlm_file = fs::File::create(&args.out_nlm)
        .with_context(|| format!("creating {}", args.out_nlm.display()))?;
    let afm_file = fs::File::create(&args.out_afm)
        .with_context(|| format!("creating {}", args.out_afm.display()))?;
    emit_files(
        &samples,
        std::io::BufWriter::new(nlm_file),
        std::io::BufWriter::new(afm_file),
        &EmitOptions {
            format: args.format,
            afm_mode: args.afm_mode,
        },
    )?;
    let mut manifest = RunManifest::new("synth", args.deterministic);
    manifest.outputs = vec![digest_file(&args.out_nlm)?, digest_file(&args.out_afm)?];
    let output = SynthOutput {
        manifest,
        spec,
        samples: samples.len(),
    };
    emit_json(&output, None)?;
    Ok(0)
}

#[derive(Serialize)]
struct FitOutput {
    manifest: RunManifest,
    ingest: IngestSummary,
    train_end_epoch_s: i64,
    report: PairModelReport,
}

fn run_fit(args: FitArgs) -> Result<u8> {
    let loaded = load_pair(&args.input)?;
    let (train, test, epoch) = split_train_test(&loaded.samples, args.train_end)?;
    let cfg = args.config.resolve(args.input.nlm, &args.input.afm);
    let report = fit_pair(&train, &test, &cfg)?;

    if let Some(path) = &args.plot_csv {
        let file =
            fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        write_plot_csv(&report, std::io::BufWriter::new(file))?;
    }

    let mut manifest = RunManifest::new("fit", args.deterministic);
    manifest.inputs = vec![
        digest_file(&args.input.nlm_file)?,
        digest_file(&args.input.afm_file)?,
    ];
    let verdict = report.verdict;
    let summary = match &report.selected {
        Some(model) => format!(
            "verdict {} ({}), test error {:.4}, coverage {:.3}",
            verdict,
            model.kind,
            model.test_rarmse.unwrap_or(f64::NAN),
            report.coverage
        ),
        None => format!("verdict {}", verdict),
    };
    let output = FitOutput {
        manifest,
        ingest: loaded.ingest,
        train_end_epoch_s: epoch,
        report,
    };
    emit_json(&output, args.out.as_deref())?;
    eprintln!("{summary}");
    Ok(verdict_exit(verdict))
}

#[derive(Serialize)]
struct StabilityOutput {
    manifest: RunManifest,
    ingest: IngestSummary,
    train_len_s: i64,
    test_len_s: i64,
    step_s: i64,
    windows: Vec<WindowReport>,
}

fn run_stability(args: StabilityArgs) -> Result<u8> {
    let loaded = load_pair(&args.input)?;
    let cfg = args.config.resolve(args.input.nlm, &args.input.afm);
    let train_len_s = (args.train_weeks * WEEK_S).round() as i64;
    let test_len_s = (args.test_weeks * WEEK_S).round() as i64;
    let step_s = (args.step_weeks * WEEK_S).round() as i64;
    let windows = stability_sweep(&loaded.samples, &cfg, train_len_s, test_len_s, step_s)?;

    let mut manifest = RunManifest::new("stability", args.deterministic);
    manifest.inputs = vec![
        digest_file(&args.input.nlm_file)?,
        digest_file(&args.input.afm_file)?,
    ];
    let accurate = windows
        .iter()
        .filter(|w| w.report.verdict == Verdict::Accurate)
        .count();
    let summary = format!("{} windows, {} accurate", windows.len(), accurate);
    let output = StabilityOutput {
        manifest,
        ingest: loaded.ingest,
        train_len_s,
        test_len_s,
        step_s,
        windows,
    };
    emit_json(&output, args.out.as_deref())?;
    eprintln!("{summary}");
    Ok(0)
}

#[derive(Serialize)]
struct SweepOutput {
    manifest: RunManifest,
    ingest: IngestSummary,
    train_end_epoch_s: i64,
    grids: SweepGrids,
    rows: Vec<SweepRow>,
}

fn run_sweep(args: SweepArgs) -> Result<u8> {
    let loaded = load_pair(&args.input)?;
    let (train, test, epoch) = split_train_test(&loaded.samples, args.train_end)?;
    let cfg = args.config.resolve(args.input.nlm, &args.input.afm);
    let mut grids = SweepGrids::default();
    if !args.alphas.is_empty() {
        grids.alphas = args.alphas.clone();
    }
    if !args.curvatures.is_empty() {
        grids.curvature_thresholds = args.curvatures.clone();
    }
    if !args.thresholds.is_empty() {
        grids.error_thresholds = args.thresholds.clone();
    }
    let rows = sensitivity_sweep(&train, &test, &cfg, &grids)?;

    let mut manifest = RunManifest::new("sweep", args.deterministic);
    manifest.inputs = vec![
        digest_file(&args.input.nlm_file)?,
        digest_file(&args.input.afm_file)?,
    ];
    let summary = format!("{} sweep cells", rows.len());
    let output = SweepOutput {
        manifest,
        ingest: loaded.ingest,
        train_end_epoch_s: epoch,
        grids,
        rows,
    };
    emit_json(&output, args.out.as_deref())?;
    eprintln!("{summary}");
    Ok(0)
}

/// Caps the data-parallel thread pool when AFMLENS_THREADS is set.
#[cfg(feature = "parallel")]
fn configure_thread_pool() -> Result<()> {
    let Ok(raw) = std::env::var("AFMLENS_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .parse()
        .with_context(|| format!("AFMLENS_THREADS must be a positive integer, got {raw:?}"))?;
    if threads == 0 {
        bail!("AFMLENS_THREADS must be at least 1");
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .context("initializing the thread pool")?;
    Ok(())
}

#[cfg(not(feature = "parallel"))]
fn configure_thread_pool() -> Result<()> {
    Ok(())
}

fn run(cli: Cli) -> Result<u8> {
    configure_thread_pool()?;
    match cli.command {
        Command::Synth(args) => run_synth(args),
        Command::Fit(args) => run_fit(args),
        Command::Stability(args) => run_stability(args),
        Command::Sweep(args) => run_sweep(args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Exit 1 on usage errors: clap's default 2 is reserved for the
            // no-clear-relationship verdict. --help and --version are not
            // errors and keep exiting 0.
            let is_help = !err.use_stderr();
            let _ = err.print();
            return if is_help {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
