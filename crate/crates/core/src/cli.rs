//! Command-line front end: composes the stimulus, renderer, store, and
//! analysis modules into reproducible batch workflows.
//!
//! Exit codes: 0 success, 1 usage error, 2 I/O or format error,
//! 3 quality-gate failure. All randomness flows from explicit `--seed`
//! flags; same argv and inputs give byte-identical outputs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};

use crate::features::P4Params;
use crate::gaze::{fit_calibration, read_calibration, write_calibration, CalibrationModel, GazeSample, Source};
use crate::metrics::{
    fixations_to_csv, quality_report, report_to_csv, segment_fixations, DEFAULT_SETTLE_MS,
    DEFAULT_TAIL_MS,
};
use crate::stimgen::{emit_resolved, parse_program, parse_resolved, resolve, saccade_grid, Axis, ResolvedSchedule};
use crate::store::{
    record, replay, threshold_sweep, FrameStore, FrameStoreWriter, RecorderConfig, SampleLog,
    DEFAULT_SEGMENT_LIMIT,
};
use crate::synthcam::{
    confounders_for_regime, truth_to_csv, CameraModel, EyeState, MotionModel, Regime, Session,
};

#[derive(Parser)]
#[command(name = "vog", version, about = "Offline video-oculography toolkit", disable_help_subcommand = true)]
struct Cli {
    #[command(subcommand)]
    command: CommandLine,
}

#[derive(Subcommand)]
enum CommandLine {
    /// Stimulus schedule tools
    #[command(subcommand)]
    Stim(StimCmd),
    /// Render a synthetic session into a frame store
    Synth(SynthArgs),
    /// Replay a stored session through feature detection
    Detect(DetectArgs),
    /// Replay one session under several pupil thresholds
    Sweep(SweepArgs),
    /// Fit a calibration model from a sample log and its schedule
    Calibrate(CalibrateArgs),
    /// Compute the data-quality report for a sample log
    Analyze(AnalyzeArgs),
}

#[derive(Subcommand)]
enum StimCmd {
    /// Resolve a stimulus program's randomness into a fixed schedule
    Compile(StimCompileArgs),
    /// Generate and resolve a saccade amplitude-grid protocol
    Grid(StimGridArgs),
}

#[derive(Args)]
struct StimCompileArgs {
    /// Stimulus program XML
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Resolved schedule XML to write
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StimGridArgs {
    /// Grid axis: h or v
    #[arg(long)]
    axis: String,
    #[arg(long = "amp-min", default_value_t = 2.5)]
    amp_min: f64,
    #[arg(long = "amp-max")]
    amp_max: f64,
    #[arg(long, default_value_t = 2.5)]
    step: f64,
    #[arg(long = "dwell-min", default_value_t = 1.0)]
    dwell_min: f64,
    #[arg(long = "dwell-max", default_value_t = 2.0)]
    dwell_max: f64,
    /// Dot diameter in degrees
    #[arg(long, default_value_t = 0.67)]
    diameter: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Resolved schedule XML
    #[arg(long)]
    schedule: PathBuf,
    /// Session directory to create
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Gaussian intensity noise sigma
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Confounder scenario: a (clean), b, c, or d
    #[arg(long, default_value = "a")]
    confounders: String,
    /// Segment split limit in bytes
    #[arg(long = "segment-limit", default_value_t = DEFAULT_SEGMENT_LIMIT)]
    segment_limit: u64,
    /// Override the P4 glint intensity (near the pupil intensity makes
    /// P4 undetectable)
    #[arg(long = "p4-intensity")]
    p4_intensity: Option<u8>,
}

#[derive(Args)]
struct DetectArgs {
    /// Session directory holding the frame store
    #[arg(long)]
    session: PathBuf,
    #[arg(long = "pupil-threshold")]
    pupil_threshold: u8,
    /// Sample log CSV to write
    #[arg(long)]
    out: PathBuf,
    /// Calibration file applied to the pupil-P1 signal
    #[arg(long)]
    calibration: Option<PathBuf>,
    /// Calibration file applied to the P1-P4 signal
    #[arg(long = "dpi-calibration")]
    dpi_calibration: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    session: PathBuf,
    /// Comma-separated pupil thresholds
    #[arg(long)]
    thresholds: String,
    /// Directory receiving samples_<T>.csv per threshold
    #[arg(long = "out-dir")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Sample log CSV of the calibration recording
    #[arg(long)]
    samples: PathBuf,
    /// Resolved schedule the recording followed
    #[arg(long)]
    schedule: PathBuf,
    /// Calibration file to write
    #[arg(long)]
    out: PathBuf,
    /// Which signal to calibrate: vog or dpi
    #[arg(long, default_value = "vog")]
    signal: String,
    /// Post-saccadic settle time excluded from each fixation
    #[arg(long = "settle-ms", default_value_t = DEFAULT_SETTLE_MS)]
    settle_ms: f64,
    /// Margin excluded before each fixation's end
    #[arg(long = "tail-ms", default_value_t = DEFAULT_TAIL_MS)]
    tail_ms: f64,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    samples: PathBuf,
    #[arg(long)]
    schedule: PathBuf,
    /// Report CSV to write
    #[arg(long)]
    report: PathBuf,
    #[arg(long, default_value = "vog")]
    signal: String,
    /// Fail with exit 3 when the signal's validity falls below this floor
    #[arg(long = "min-validity")]
    min_validity: Option<f64>,
    /// Optional SVG gaze-trace plot
    #[arg(long)]
    plot: Option<PathBuf>,
    /// Optional per-fixation detail CSV
    #[arg(long)]
    fixations: Option<PathBuf>,
    /// Post-saccadic settle time excluded from each fixation
    #[arg(long = "settle-ms", default_value_t = DEFAULT_SETTLE_MS)]
    settle_ms: f64,
    /// Margin excluded before each fixation's end
    #[arg(long = "tail-ms", default_value_t = DEFAULT_TAIL_MS)]
    tail_ms: f64,
}

enum CliError {
    Input(String),
    Gate(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Gate(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Gate(m) => m,
        }
    }
}

fn input_err(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// Runs one invocation and returns the process exit code. `argv[0]` is
/// the program name, as in `std::env::args`.
pub fn dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let args: Vec<String> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints --help/--version through the same error path
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        CommandLine::Stim(StimCmd::Compile(a)) => run_stim_compile(&a),
        CommandLine::Stim(StimCmd::Grid(a)) => run_stim_grid(&a),
        CommandLine::Synth(a) => run_synth(&a),
        CommandLine::Detect(a) => run_detect(&a),
        CommandLine::Sweep(a) => run_sweep(&a),
        CommandLine::Calibrate(a) => run_calibrate(&a),
        CommandLine::Analyze(a) => run_analyze(&a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.code()
        }
    }
}

fn run_stim_compile(args: &StimCompileArgs) -> Result<(), CliError> {
    let text = read_file(&args.input)?;
    let program = parse_program(&text).map_err(input_err)?;
    let schedule = resolve(&program, args.seed).map_err(input_err)?;
    write_file(&args.out, &emit_resolved(&schedule))
}

fn run_stim_grid(args: &StimGridArgs) -> Result<(), CliError> {
    let axis = match args.axis.as_str() {
        "h" => Axis::Horizontal,
        "v" => Axis::Vertical,
        other => return Err(CliError::Input(format!("unknown axis {other:?}, expected h or v"))),
    };
    let program = saccade_grid(
        axis,
        args.amp_min,
        args.amp_max,
        args.step,
        (args.dwell_min, args.dwell_max),
        args.diameter,
    );
    let schedule = resolve(&program, args.seed).map_err(input_err)?;
    write_file(&args.out, &emit_resolved(&schedule))
}

fn parse_signal(s: &str) -> Result<Source, CliError> {
    match s {
        "vog" => Ok(Source::Vog),
        "dpi" => Ok(Source::Dpi),
        other => Err(CliError::Input(format!("unknown signal {other:?}, expected vog or dpi"))),
    }
}

fn run_synth(args: &SynthArgs) -> Result<(), CliError> {
    let schedule = parse_resolved(&read_file(&args.schedule)?).map_err(input_err)?;
    let regime = Regime::parse(&args.confounders)
        .ok_or_else(|| CliError::Input(format!("unknown confounder scenario {:?}", args.confounders)))?;
    let mut eye = EyeState::default();
    if let Some(v) = args.p4_intensity {
        eye.p4_intensity = v;
    }
    let confounders = confounders_for_regime(regime, &eye);
    let motion = MotionModel { noise_sigma: args.noise, ..MotionModel::default() };
    let session = Session::new(schedule, motion, eye, CameraModel::default(), confounders, args.seed)
        .map_err(input_err)?;

    let mut writer = FrameStoreWriter::create(&args.out, args.segment_limit).map_err(input_err)?;
    // The producer thread renders; truth rows and any render error are
    // handed back through shared slots.
    let truth_rows = Mutex::new(Vec::new());
    let render_error = Mutex::new(None);
    let producer = session.map_while(|item| match item {
        Ok((frame, truth)) => {
            truth_rows.lock().unwrap().push(truth);
            Some(frame)
        }
        Err(e) => {
            *render_error.lock().unwrap() = Some(e);
            None
        }
    });
    record(producer, &RecorderConfig::default(), &mut writer).map_err(input_err)?;
    if let Some(e) = render_error.into_inner().unwrap() {
        return Err(input_err(e));
    }
    writer.finish().map_err(input_err)?;
    let truth = truth_rows.into_inner().unwrap();
    write_file(&args.out.join("truth.csv"), &truth_to_csv(&truth))
}

fn load_calibration(path: &Path) -> Result<CalibrationModel, CliError> {
    read_calibration(&read_file(path)?).map_err(input_err)
}

fn run_detect(args: &DetectArgs) -> Result<(), CliError> {
    let store = FrameStore::open(&args.session).map_err(input_err)?;
    let vog_cal = args.calibration.as_deref().map(load_calibration).transpose()?;
    let dpi_cal = args.dpi_calibration.as_deref().map(load_calibration).transpose()?;
    let log = replay(
        &store,
        args.pupil_threshold,
        &P4Params::default(),
        vog_cal.as_ref(),
        dpi_cal.as_ref(),
    )
    .map_err(input_err)?;
    write_file(&args.out, &log.to_csv())
}

fn run_sweep(args: &SweepArgs) -> Result<(), CliError> {
    let thresholds: Vec<u8> = args
        .thresholds
        .split(',')
        .map(|t| t.trim().parse().map_err(|_| CliError::Input(format!("bad threshold {t:?}"))))
        .collect::<Result<_, _>>()?;
    if thresholds.is_empty() {
        return Err(CliError::Input("at least one threshold required".into()));
    }
    let store = FrameStore::open(&args.session).map_err(input_err)?;
    let logs = threshold_sweep(&store, &thresholds, &P4Params::default()).map_err(input_err)?;
    fs::create_dir_all(&args.out_dir).map_err(input_err)?;
    for (t, log) in logs {
        write_file(&args.out_dir.join(format!("samples_{t}.csv")), &log.to_csv())?;
    }
    Ok(())
}

fn run_calibrate(args: &CalibrateArgs) -> Result<(), CliError> {
    let signal = parse_signal(&args.signal)?;
    let log = SampleLog::from_csv(&read_file(&args.samples)?).map_err(input_err)?;
    let schedule = parse_resolved(&read_file(&args.schedule)?).map_err(input_err)?;
    let samples = log.gaze_samples(signal);
    let (segments, _) = segment_fixations(&samples, &schedule, args.settle_ms, args.tail_ms)
        .map_err(input_err)?;
    let pairs: Vec<_> = segments
        .iter()
        .map(|seg| {
            let raw = crate::gaze::DifferenceVector {
                dx: seg.raw_mean.0,
                dy: seg.raw_mean.1,
                source: signal,
            };
            (raw, seg.target_deg)
        })
        .collect();
    let model = fit_calibration(&pairs).map_err(input_err)?;
    write_file(&args.out, &write_calibration(&model))
}

fn run_analyze(args: &AnalyzeArgs) -> Result<(), CliError> {
    let signal = parse_signal(&args.signal)?;
    let log = SampleLog::from_csv(&read_file(&args.samples)?).map_err(input_err)?;
    let schedule = parse_resolved(&read_file(&args.schedule)?).map_err(input_err)?;
    let samples = log.gaze_samples(signal);
    let report = quality_report(&samples, &schedule, args.settle_ms, args.tail_ms)
        .map_err(input_err)?;
    write_file(&args.report, &report_to_csv(&report))?;
    if let Some(path) = &args.fixations {
        let (segments, _) =
            segment_fixations(&samples, &schedule, args.settle_ms, args.tail_ms)
                .map_err(input_err)?;
        write_file(path, &fixations_to_csv(&segments, None))?;
    }
    if let Some(path) = &args.plot {
        write_file(path, &plot_svg(&samples, &schedule))?;
    }
    if let Some(floor) = args.min_validity {
        if report.validity_fraction < floor {
            return Err(CliError::Gate(format!(
                "validity {:.4} below floor {:.4}",
                report.validity_fraction, floor
            )));
        }
    }
    Ok(())
}

const PLOT_W: f64 = 960.0;
const PLOT_H: f64 = 320.0;
const PLOT_MARGIN: f64 = 40.0;

/// Gaze traces over time as an SVG line chart: horizontal and vertical
/// gaze (calibrated degrees when present, raw pixels otherwise) plus the
/// target staircase.
pub fn plot_svg(samples: &[GazeSample], schedule: &ResolvedSchedule) -> String {
    let calibrated = samples.iter().any(|s| s.x_deg.is_finite());
    let value = |s: &GazeSample| -> (f64, f64) {
        if calibrated {
            (s.x_deg, s.y_deg)
        } else {
            (s.raw.dx, s.raw.dy)
        }
    };
    let t_max = samples.last().map(|s| s.timestamp_us).unwrap_or(1.0).max(1.0);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for s in samples.iter().filter(|s| s.valid) {
        let (x, y) = value(s);
        for v in [x, y] {
            if v.is_finite() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }
    if calibrated {
        for ev in &schedule.events {
            lo = lo.min(ev.target_deg.0.min(ev.target_deg.1));
            hi = hi.max(ev.target_deg.0.max(ev.target_deg.1));
        }
    }
    if !(lo.is_finite() && hi.is_finite()) {
        lo = -1.0;
        hi = 1.0;
    }
    if hi - lo < 1e-9 {
        hi = lo + 1.0;
    }
    let sx = |t: f64| PLOT_MARGIN + (t / t_max) * (PLOT_W - 2.0 * PLOT_MARGIN);
    let sy = |v: f64| PLOT_H - PLOT_MARGIN - ((v - lo) / (hi - lo)) * (PLOT_H - 2.0 * PLOT_MARGIN);

    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{PLOT_W}" height="{PLOT_H}" viewBox="0 0 {PLOT_W} {PLOT_H}">"#
    )
    .unwrap();
    writeln!(svg, r#"<rect width="{PLOT_W}" height="{PLOT_H}" fill="white"/>"#).unwrap();
    let unit = if calibrated { "deg" } else { "px" };
    writeln!(
        svg,
        r#"<text x="{PLOT_MARGIN}" y="20" font-family="monospace" font-size="12">gaze trace ({unit}); h: blue, v: red, target: gray</text>"#
    )
    .unwrap();

    if calibrated {
        // target staircase, horizontal component
        let mut d = String::new();
        for (i, ev) in schedule.events.iter().enumerate() {
            let cmd = if i == 0 { 'M' } else { 'L' };
            write!(
                d,
                "{cmd}{:.2} {:.2} L{:.2} {:.2} ",
                sx(ev.t_start_us as f64),
                sy(ev.target_deg.0),
                sx(ev.t_end_us as f64),
                sy(ev.target_deg.0)
            )
            .unwrap();
        }
        writeln!(svg, r##"<path d="{}" fill="none" stroke="#999" stroke-width="1"/>"##, d.trim_end()).unwrap();
    }

    for (pick, color) in [(0usize, "#1f4fd8"), (1usize, "#d81f1f")] {
        let mut d = String::new();
        let mut pen_down = false;
        for s in samples {
            let (x, y) = value(s);
            let v = if pick == 0 { x } else { y };
            if !(s.valid && v.is_finite()) {
                pen_down = false;
                continue;
            }
            let cmd = if pen_down { 'L' } else { 'M' };
            write!(d, "{cmd}{:.2} {:.2} ", sx(s.timestamp_us), sy(v)).unwrap();
            pen_down = true;
        }
        writeln!(svg, r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1"/>"#, d.trim_end()).unwrap();
    }
    svg.push_str("</svg>\n");
    svg
}
