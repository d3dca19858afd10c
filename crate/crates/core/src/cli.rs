//! Command-line front end. Each command composes library operations.
//!
//! Exit codes: 0 success or valid, 1 invalid submission, failed compliance or
//! failed run, 2 usage or configuration error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::clock::{MonotonicClock, SimClock};
use crate::compliance::{self, ComplianceTest, SuiteOptions};
use crate::engine::Engine;
use crate::ipc::StubServer;
use crate::metrics;
use crate::profiles::{
    builtin_profiles, find_profile, load_settings_with, BenchmarkProfile, Mode, RunSettings, Scenario,
};
use crate::report::{self, load_bundle, render_report, validate_submission, write_run, write_verdicts};
use crate::sut::endpoint::{open_sut, parse_endpoint, Endpoint};
use crate::sut::SutContract;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "rtbench", version, about = "Latency and accuracy harness for real-time inference systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the built-in benchmark profiles.
    ListProfiles,
    /// Run one scenario and write the run log.
    Run(RunArgs),
    /// Run compliance tests and write their verdicts.
    Compliance(ComplianceArgs),
    /// Validate submission bundle directories.
    Validate(ValidateArgs),
    /// Validate bundles and render the results table.
    Report(ReportArgs),
    /// Compute an accuracy metric or apply the accuracy gate.
    #[command(subcommand)]
    Metric(MetricCommand),
    /// Serve a simulated SUT over the wire protocol.
    StubServe(StubArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ClockKind {
    Real,
    Sim,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    profile: Option<String>,
    #[arg(long)]
    settings: Option<PathBuf>,
    #[arg(long)]
    scenario: Option<Scenario>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    sut: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Start from submission-length defaults before applying the settings file.
    #[arg(long)]
    submission: bool,
    /// `sim` runs simulated SUTs on a discrete-event clock.
    #[arg(long, value_enum, default_value = "real")]
    clock: ClockKind,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ComplianceArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Tests to run; all when omitted.
    #[arg(long = "test")]
    tests: Vec<ComplianceTest>,
    #[arg(long, default_value_t = compliance::DEFAULT_RATIO_THRESHOLD)]
    ratio_threshold: f64,
    #[arg(long, default_value_t = compliance::DEFAULT_SAMPLE_FRACTION)]
    sample_fraction: f64,
    #[arg(long, default_value_t = compliance::DEFAULT_CACHING_QUERIES)]
    caching_queries: usize,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long = "bundle", required = true)]
    bundles: Vec<PathBuf>,
    /// Profile to validate against; defaults to the one named in the log.
    #[arg(long)]
    profile: Option<String>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long = "bundle", required = true)]
    bundles: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum MetricCommand {
    /// Detection mAP from a detection record file.
    Map {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = metrics::DEFAULT_IOU_THRESHOLD)]
        iou_threshold: f64,
    },
    /// Segmentation mIoU from predicted and ground-truth mask files.
    Miou {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        classes: u32,
    },
    /// Accuracy gate against a reference value.
    Gate {
        #[arg(long)]
        measured: f64,
        #[arg(long)]
        reference: Option<f64>,
        #[arg(long)]
        constraint: Option<f64>,
        /// Takes reference and constraint from a profile.
        #[arg(long)]
        profile: Option<String>,
    },
}

#[derive(Debug, Args)]
struct StubArgs {
    #[arg(long, default_value = "127.0.0.1:0")]
    listen: String,
    /// Simulated SUT behind the server, as a `sim:` endpoint.
    #[arg(long, default_value = "sim:fixed:10ms")]
    sut: String,
}

struct Io<'a> {
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
}

/// Outcome of a command: an exit code, or a usage/config error message.
type CmdResult = Result<i32, String>;

/// Entry point used by the binary.
pub fn main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with_io(argv, &mut stdout.lock(), &mut stderr.lock())
}

/// Like [`main`] with explicit output streams.
pub fn run_with_io<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{text}");
            } else {
                let _ = write!(out, "{text}");
            }
            return code;
        }
    };
    let mut io = Io { out, err };
    let result = match cli.command {
        Command::ListProfiles => list_profiles(&mut io),
        Command::Run(a) => cmd_run(&mut io, &a),
        Command::Compliance(a) => cmd_compliance(&mut io, &a),
        Command::Validate(a) => cmd_validate(&mut io, &a),
        Command::Report(a) => cmd_report(&mut io, &a),
        Command::Metric(m) => cmd_metric(&mut io, &m),
        Command::StubServe(a) => cmd_stub(&mut io, &a),
    };
    match result {
        Ok(code) => code,
        Err(msg) => {
            let _ = writeln!(io.err, "error: {msg}");
            EXIT_USAGE
        }
    }
}

fn opt_f64(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "-".into())
}

/// One `list-profiles` row.
pub fn profile_row(p: &BenchmarkProfile) -> String {
    format!(
        "{:<16} {:>3} {:>10} {:>6} {:>6} {:>6} {:>9}",
        p.name,
        p.inputs_per_query,
        format!("{}x{}", p.input_width_px, p.input_height_px),
        p.tail_percentile,
        p.accuracy_constraint,
        opt_f64(p.constant_stream_hz),
        opt_f64(p.reference_metric)
    )
}

fn list_profiles(io: &mut Io) -> CmdResult {
    let _ = writeln!(
        io.out,
        "# {:<14} {:>3} {:>10} {:>6} {:>6} {:>6} {:>9}",
        "profile", "ipq", "input", "tail", "constr", "cs_hz", "reference"
    );
    for p in builtin_profiles() {
        let _ = writeln!(io.out, "{}", profile_row(&p));
    }
    Ok(EXIT_OK)
}

fn resolve(a: &RunArgs) -> Result<(BenchmarkProfile, RunSettings), String> {
    let base = if a.submission {
        RunSettings::submission()
    } else {
        RunSettings::default()
    };
    let mut settings = match &a.settings {
        Some(path) => load_settings_with(path, base).map_err(|e| e.to_string())?,
        None => base,
    };
    if let Some(p) = &a.profile {
        settings.profile = Some(p.clone());
    }
    if let Some(s) = a.scenario {
        settings.scenario = s;
    }
    if let Some(m) = a.mode {
        settings.mode = m;
    }
    if let Some(s) = &a.sut {
        settings.sut_endpoint = s.clone();
    }
    if let Some(s) = a.seed {
        settings.seed = s;
    }
    let name = settings
        .profile
        .clone()
        .ok_or("no profile given (use --profile or `profile` in the settings file)")?;
    let profile = find_profile(&name).ok_or_else(|| format!("unknown profile `{name}`"))?;
    Ok((profile, settings))
}

fn engine_and_sut(a: &RunArgs, settings: &RunSettings) -> Result<(Engine, Box<dyn SutContract>), String> {
    let endpoint = parse_endpoint(&settings.sut_endpoint)?;
    let engine = match (a.clock, &endpoint) {
        (ClockKind::Sim, Endpoint::Tcp(_)) => {
            return Err("--clock sim only works with simulated (sim:) endpoints".into())
        }
        (ClockKind::Sim, _) => Engine::new(Arc::new(SimClock::new())),
        (ClockKind::Real, _) => Engine::new(Arc::new(MonotonicClock::new())),
    };
    let sut = open_sut(&settings.sut_endpoint, settings.seed).map_err(|e| e.to_string())?;
    Ok((engine, sut))
}

fn emit(io: &mut Io, out: &Option<PathBuf>, text: &str) -> Result<(), String> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| format!("{}: {e}", path.display())),
        None => io.out.write_all(text.as_bytes()).map_err(|e| e.to_string()),
    }
}

fn cmd_run(io: &mut Io, a: &RunArgs) -> CmdResult {
    let (profile, settings) = resolve(a)?;
    let (mut engine, mut sut) = engine_and_sut(a, &settings)?;
    let (log, failure) = match engine.run(sut.as_mut(), &settings, &profile) {
        Ok(log) => (log, None),
        Err(f) => (*f.log, Some(f.error)),
    };
    if let Some(crate::engine::RunError::Invalid(v)) = &failure {
        return Err(v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "));
    }
    emit(io, &a.out, &write_run(&log, &[]))?;
    if let Some(e) = failure {
        let _ = writeln!(io.err, "run failed: {e}");
        return Ok(EXIT_INVALID);
    }
    match log.summary() {
        Ok(s) => {
            let _ = writeln!(
                io.err,
                "{} {} {}: {} queries, p50 {} ns, p99 {} ns, p999 {} ns, overruns {}",
                profile.name, log.settings.scenario, log.settings.mode, s.count, s.p50_ns, s.p99_ns, s.p999_ns,
                s.overrun_count
            );
            if log.settings.mode == Mode::Performance {
                let v = crate::stats::check_validity(&s, &log.settings);
                for m in &v.messages {
                    let _ = writeln!(io.err, "warning: {m}");
                }
            }
        }
        Err(e) => {
            let _ = writeln!(io.err, "no summary: {e}");
        }
    }
    Ok(EXIT_OK)
}

fn cmd_compliance(io: &mut Io, a: &ComplianceArgs) -> CmdResult {
    let (profile, settings) = resolve(&a.run)?;
    let (mut engine, mut sut) = engine_and_sut(&a.run, &settings)?;
    let tests = if a.tests.is_empty() {
        ComplianceTest::ALL.to_vec()
    } else {
        a.tests.clone()
    };
    let opts = SuiteOptions {
        ratio_threshold: a.ratio_threshold,
        sample_fraction: a.sample_fraction,
        caching_queries: a.caching_queries,
        ..SuiteOptions::default()
    };
    let verdicts = match compliance::run_suite(&mut engine, sut.as_mut(), &settings, &profile, &tests, &opts) {
        Ok(v) => v,
        Err(compliance::ComplianceError::Run(f)) => {
            let _ = writeln!(io.err, "compliance run failed: {}", f.error);
            return Ok(EXIT_INVALID);
        }
        Err(e) => return Err(e.to_string()),
    };
    for v in &verdicts {
        let _ = writeln!(io.err, "{v}");
    }
    emit(io, &a.run.out, &write_verdicts(&verdicts))?;
    Ok(if verdicts.iter().all(|v| v.passed) {
        EXIT_OK
    } else {
        EXIT_INVALID
    })
}

fn validate_dir(dir: &Path, profile: &Option<String>) -> Result<report::SubmissionReport, String> {
    let bundle = load_bundle(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    let name = profile
        .clone()
        .unwrap_or_else(|| bundle.performance.run.profile.clone());
    let profile = find_profile(&name).ok_or_else(|| format!("{}: unknown profile `{name}`", dir.display()))?;
    validate_submission(&bundle, &profile).map_err(|e| format!("{}: {e}", dir.display()))
}

fn cmd_validate(io: &mut Io, a: &ValidateArgs) -> CmdResult {
    let mut all_valid = true;
    for dir in &a.bundles {
        let r = validate_dir(dir, &a.profile)?;
        let _ = writeln!(io.out, "{}: {}", dir.display(), r);
        for c in r.failures() {
            let _ = writeln!(io.err, "{}: invalid: {} ({})", dir.display(), c.name, c.detail);
        }
        all_valid &= r.is_valid();
    }
    Ok(if all_valid { EXIT_OK } else { EXIT_INVALID })
}

fn cmd_report(io: &mut Io, a: &ReportArgs) -> CmdResult {
    let reports = a
        .bundles
        .iter()
        .map(|d| validate_dir(d, &None))
        .collect::<Result<Vec<_>, _>>()?;
    emit(io, &a.out, &render_report(&reports))?;
    Ok(EXIT_OK)
}

fn read(path: &Path) -> Result<String, String> {
    fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn cmd_metric(io: &mut Io, m: &MetricCommand) -> CmdResult {
    match m {
        MetricCommand::Map { input, iou_threshold } => {
            let frames = metrics::parse_detections(&read(input)?).map_err(|e| e.to_string())?;
            let v = metrics::mean_ap(&frames, *iou_threshold).map_err(|e| e.to_string())?;
            let _ = writeln!(io.out, "{v}");
        }
        MetricCommand::Miou { pred, truth, classes } => {
            let p = metrics::parse_masks(&read(pred)?).map_err(|e| e.to_string())?;
            let t = metrics::parse_masks(&read(truth)?).map_err(|e| e.to_string())?;
            let mut pairs = Vec::new();
            for (id, tm) in &t {
                let pm = p.get(id).ok_or_else(|| format!("no predicted mask for id {id}"))?;
                pairs.push((pm, tm));
            }
            if p.len() != t.len() {
                return Err("predicted masks without ground truth".into());
            }
            let v = metrics::miou_many(&pairs, *classes).map_err(|e| e.to_string())?;
            let _ = writeln!(io.out, "{v}");
        }
        MetricCommand::Gate {
            measured,
            reference,
            constraint,
            profile,
        } => {
            let p = match profile {
                Some(n) => Some(find_profile(n).ok_or_else(|| format!("unknown profile `{n}`"))?),
                None => None,
            };
            let reference = reference
                .or(p.as_ref().and_then(|p| p.reference_metric))
                .ok_or("no reference value (use --reference)")?;
            let constraint = constraint
                .or(p.as_ref().map(|p| p.accuracy_constraint))
                .ok_or("no constraint (use --constraint or --profile)")?;
            let g = metrics::accuracy_gate(*measured, reference, constraint).map_err(|e| e.to_string())?;
            let _ = writeln!(
                io.out,
                "{} measured {} threshold {}",
                if g.passed { "PASS" } else { "FAIL" },
                g.measured,
                g.threshold
            );
            return Ok(if g.passed { EXIT_OK } else { EXIT_INVALID });
        }
    }
    Ok(EXIT_OK)
}

fn cmd_stub(io: &mut Io, a: &StubArgs) -> CmdResult {
    let config = match parse_endpoint(&a.sut)? {
        Endpoint::Sim { config, .. } => config,
        Endpoint::Tcp(_) => return Err("stub-serve needs a sim: endpoint".into()),
    };
    let server = StubServer::bind(&a.listen, config).map_err(|e| e.to_string())?;
    let _ = writeln!(io.out, "{}", server.endpoint());
    let _ = io.out.flush();
    server.join();
    Ok(EXIT_OK)
}
