//! Command-line front end for the tracking toolkit.
//!
//! Subcommands cover the whole loop: render a synthetic sequence, track a
//! target through it, score the results, and run the built-in verification
//! batteries (gradient check, template-update policy check).
//!
//! Exit codes: 0 on success, 1 when a check fails or input data is bad,
//! 2 on usage errors (bad flags, malformed config, bad environment).

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mtnetkit::config::RunConfig;
use mtnetkit::eval::{
    build_report, curves, evaluate_sequence, parse_attributes, parse_box_file, CurveReport,
};
use mtnetkit::synth::{write_sequence, SynthConfig};
use mtnetkit::tracker::{format_results, load_sequence, state_log_json, track_sequence};
use mtnetkit::verify::{gradcheck, statecheck};

const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;

#[derive(Parser)]
#[command(
    name = "mtnetkit",
    version,
    about = "Two-modality tracking toolkit: synthesize, track, score, verify",
    long_about = "Two-modality tracking toolkit: synthesize, track, score, verify.\n\n\
                  Exit codes: 0 success, 1 failed check or bad data, 2 usage error.\n\
                  MTNETKIT_THREADS caps the compute worker threads (default: all\n\
                  available cores). Outputs are bitwise identical for every count."
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render a synthetic RGB + thermal sequence with ground truth
    Synth(SynthArgs),
    /// Track the ground-truth target of frame 0 through a sequence directory
    Track(TrackArgs),
    /// Score tracking results against ground truth (JSON report on stdout)
    Eval(EvalArgs),
    /// Write precision / success / normalized-precision curves as CSV
    Curves(CurvesArgs),
    /// Compare analytic loss gradients against central differences
    Gradcheck(GradcheckArgs),
    /// Sweep the template-update policy against an independent simulator
    Statecheck,
}

#[derive(Args)]
struct SynthArgs {
    /// Directory to create (rgb/, thermal/, groundtruth.txt)
    #[arg(long)]
    out: PathBuf,
    /// Sequence config JSON; defaults are used when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed from the config
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrackArgs {
    /// Sequence directory (rgb/, thermal/, groundtruth.txt)
    sequence: PathBuf,
    /// Directory for results.txt and state_log.json
    #[arg(long)]
    out: PathBuf,
    /// Run config JSON; defaults are used when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed from the config
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    /// Ground-truth box file (one x,y,w,h line per frame)
    #[arg(long)]
    gt: PathBuf,
    /// Tracker results in the same format
    #[arg(long)]
    results: PathBuf,
    /// Center-error threshold in pixels for the precision rate
    #[arg(long, default_value_t = 20.0)]
    tau: f64,
    /// Sequence name used in the report and attribute lookup
    #[arg(long, default_value = "sequence")]
    name: String,
    /// Attribute sidecar (lines of "sequence: ATTR ATTR ...")
    #[arg(long)]
    attributes: Option<PathBuf>,
    /// Also write the report to <out>/report.json
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CurvesArgs {
    /// Ground-truth box file (one x,y,w,h line per frame)
    #[arg(long)]
    gt: PathBuf,
    /// Tracker results in the same format
    #[arg(long)]
    results: PathBuf,
    /// Directory for precision.csv, success.csv, norm_precision.csv
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Seed for the random trial battery
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Number of random trials (must be >= 1)
    #[arg(long, default_value_t = 100)]
    trials: usize,
}

/// An error plus the exit class it belongs to.
enum CliError {
    /// The invocation itself is wrong: bad flag value, malformed config,
    /// bad environment variable. Exit 2.
    Usage(String),
    /// The invocation is fine but the work failed: unreadable or malformed
    /// data, or a pipeline error. Exit 1.
    Failure(String),
}

/// Prints one line to stdout, exiting quietly if the reader hung up.
///
/// `println!` panics when stdout is a pipe whose consumer already closed
/// (`mtnetkit eval ... | head` is the classic case).  Downstream closing
/// early means it got everything it wanted, so treat that as success.
fn say(line: std::fmt::Arguments) {
    let mut out = std::io::stdout().lock();
    if writeln!(out, "{line}").is_err() {
        std::process::exit(0);
    }
}

macro_rules! sayln {
    ($($arg:tt)*) => { say(format_args!($($arg)*)) };
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn failure(e: impl std::fmt::Display) -> CliError {
    CliError::Failure(e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match worker_cap().map(|workers| {
        mtnetkit::tensor::set_workers(workers);
        workers
    }) {
        Ok(_) => {}
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            return ExitCode::from(EXIT_USAGE);
        }
        Err(CliError::Failure(m)) => {
            eprintln!("error: {m}");
            return ExitCode::from(EXIT_FAILURE);
        }
    }
    match run(cli.cmd) {
        Ok(code) => code,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(CliError::Failure(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}

fn run(cmd: Cmd) -> Result<ExitCode, CliError> {
    match cmd {
        Cmd::Synth(args) => cmd_synth(args),
        Cmd::Track(args) => cmd_track(args),
        Cmd::Eval(args) => cmd_eval(args),
        Cmd::Curves(args) => cmd_curves(args),
        Cmd::Gradcheck(args) => cmd_gradcheck(args),
        Cmd::Statecheck => cmd_statecheck(),
    }
}

/// Worker-thread count from `MTNETKIT_THREADS`; defaults to the available
/// cores. The kernels keep every output bitwise identical for any count,
/// so this only changes wall time.
fn worker_cap() -> Result<usize, CliError> {
    match std::env::var("MTNETKIT_THREADS") {
        Err(std::env::VarError::NotPresent) => {
            Ok(std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
        }
        Err(e) => Err(CliError::Usage(format!("MTNETKIT_THREADS: {e}"))),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(CliError::Usage(format!(
                "MTNETKIT_THREADS must be a positive integer, got {s:?}"
            ))),
        },
    }
}

fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Failure(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Failure(format!("{}: {e}", path.display())))
}

fn make_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::Failure(format!("{}: {e}", path.display())))
}

fn cmd_synth(args: SynthArgs) -> Result<ExitCode, CliError> {
    let mut cfg = match &args.config {
        Some(p) => SynthConfig::from_json(&read_file(p)?).map_err(usage)?,
        None => SynthConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let seq = write_sequence(&cfg, &args.out).map_err(failure)?;
    sayln!("seed {}", cfg.seed);
    sayln!("wrote {} frame pairs to {}", seq.gt.len(), args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_track(args: TrackArgs) -> Result<ExitCode, CliError> {
    let workers = worker_cap()?;
    let mut cfg = match &args.config {
        Some(p) => RunConfig::from_json(&read_file(p)?).map_err(usage)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let (frames, gt) = load_sequence(&args.sequence).map_err(failure)?;
    let first = gt
        .first()
        .ok_or_else(|| CliError::Failure("ground truth has no frames".into()))?;
    let outputs = track_sequence(&cfg, &frames, first).map_err(failure)?;
    make_dir(&args.out)?;
    let results_path = args.out.join("results.txt");
    let log_path = args.out.join("state_log.json");
    write_file(&results_path, &format_results(&outputs))?;
    write_file(&log_path, &state_log_json(cfg.seed, &outputs))?;
    sayln!("seed {}", cfg.seed);
    sayln!("workers {workers}");
    sayln!("tracked {} frames from {}", outputs.len(), args.sequence.display());
    sayln!("results {}", results_path.display());
    sayln!("state log {}", log_path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(args: EvalArgs) -> Result<ExitCode, CliError> {
    if !(args.tau.is_finite() && args.tau >= 0.0) {
        return Err(CliError::Usage(format!(
            "--tau must be a finite non-negative number, got {}",
            args.tau
        )));
    }
    let gt = parse_box_file(&read_file(&args.gt)?).map_err(failure)?;
    let pred = parse_box_file(&read_file(&args.results)?).map_err(failure)?;
    let ev = evaluate_sequence(&args.name, &gt, &pred).map_err(failure)?;
    let tags = match &args.attributes {
        Some(p) => parse_attributes(&read_file(p)?).map_err(failure)?,
        None => BTreeMap::new(),
    };
    let report = build_report(&[ev], &tags, args.tau).map_err(failure)?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    sayln!("{json}");
    if let Some(out) = &args.out {
        make_dir(out)?;
        write_file(&out.join("report.json"), &(json + "\n"))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_curves(args: CurvesArgs) -> Result<ExitCode, CliError> {
    let gt = parse_box_file(&read_file(&args.gt)?).map_err(failure)?;
    let pred = parse_box_file(&read_file(&args.results)?).map_err(failure)?;
    let ev = evaluate_sequence("sequence", &gt, &pred).map_err(failure)?;
    let report = curves(&ev.center_errors, &ev.norm_errors, &ev.ious).map_err(failure)?;
    make_dir(&args.out)?;
    write_file(&args.out.join("precision.csv"), &CurveReport::to_csv(&report.precision))?;
    write_file(&args.out.join("success.csv"), &CurveReport::to_csv(&report.success))?;
    write_file(
        &args.out.join("norm_precision.csv"),
        &CurveReport::to_csv(&report.norm_precision),
    )?;
    sayln!("wrote precision.csv, success.csv, norm_precision.csv to {}", args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<ExitCode, CliError> {
    if args.trials == 0 {
        return Err(CliError::Usage("--trials must be >= 1".into()));
    }
    let report = gradcheck(args.seed, args.trials);
    sayln!("{report}");
    Ok(if report.pass { ExitCode::SUCCESS } else { ExitCode::from(EXIT_FAILURE) })
}

fn cmd_statecheck() -> Result<ExitCode, CliError> {
    let report = statecheck();
    sayln!("{report}");
    Ok(if report.pass { ExitCode::SUCCESS } else { ExitCode::from(EXIT_FAILURE) })
}
