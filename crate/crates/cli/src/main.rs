use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::mpsc;
use std::thread;

use clap::{Args, Parser, Subcommand};
use groundscale::io::{self, FrameLabels, IoError};
use groundscale::metrics::{rle, trajectory_length, Trajectory};
use groundscale::synth::{generate_scene, motion_script, Preset, SyntheticScene};
use groundscale::{evaluate, FeatureFrame, Pipeline, PipelineConfig, PipelineError};

/// Frames buffered between the reader thread and the estimator.
const QUEUE_DEPTH: usize = 8;

#[derive(Parser)]
#[command(
    name = "groundscale",
    version,
    about = "Recover metric scale for monocular VO from a known camera height"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate per-frame scale and write the rescaled trajectory.
    Run(RunArgs),
    /// Generate a synthetic frame stream with ground truth.
    Synth(SynthArgs),
    /// Compare an estimated trajectory with ground truth.
    Eval(EvalArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    input: PathBuf,
    /// Metric camera height in meters.
    #[arg(long)]
    height: f64,
    /// Frames pooled for the plane fit.
    #[arg(long, default_value_t = 4)]
    window: usize,
    /// Moving-average length over fresh scales (odd).
    #[arg(long, default_value_t = 5)]
    smooth: usize,
    /// Pitch and orthogonality tolerance, e.g. `5deg`, `0.08rad` or `5`.
    #[arg(long, default_value = "5deg", value_parser = parse_angle)]
    theta: f64,
    /// Inlier distance in scene units.
    #[arg(long, default_value_t = 0.01)]
    dthresh: f64,
    #[arg(long, default_value_t = 200)]
    ransac_iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fail instead of back-filling frames before the first ground detection.
    #[arg(long)]
    no_backfill: bool,
    #[arg(long)]
    out_traj: PathBuf,
    #[arg(long)]
    out_scales: PathBuf,
    #[arg(long)]
    report: PathBuf,
    /// Ground-truth trajectory; adds RLE to the report.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Label sidecar from `synth`; adds scale errors to the report.
    #[arg(long)]
    gt_labels: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    preset: Preset,
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    /// Pixel noise standard deviation.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Fraction of static clutter features.
    #[arg(long, default_value_t = 0.0)]
    clutter: f64,
    /// Fraction of moving-object features.
    #[arg(long, default_value_t = 0.0)]
    moving: f64,
    /// Relative depth noise standard deviation.
    #[arg(long, default_value_t = 0.0)]
    depth_noise: f64,
    #[arg(long, default_value_t = 400)]
    features: usize,
    #[arg(long, default_value_t = 1.7)]
    height: f64,
    #[arg(long, default_value_t = 200)]
    frames: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth trajectory; labels go next to it with `.labels.jsonl` appended.
    #[arg(long)]
    out_truth: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    est: PathBuf,
    #[arg(long)]
    gt: PathBuf,
}

#[derive(Debug)]
enum CliError {
    Parse(String),
    Pipeline(String),
    Other(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Other(_) => 1,
            CliError::Parse(_) => 2,
            CliError::Pipeline(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Parse(m) | CliError::Pipeline(m) | CliError::Other(m) => f.write_str(m),
        }
    }
}

fn io_error(path: &Path, e: IoError) -> CliError {
    let msg = format!("{}: {e}", path.display());
    if e.is_parse() {
        CliError::Parse(msg)
    } else {
        CliError::Other(msg)
    }
}

fn parse_angle(s: &str) -> Result<f64, String> {
    let s = s.trim();
    let (num, to_rad) = if let Some(v) = s.strip_suffix("deg") {
        (v, true)
    } else if let Some(v) = s.strip_suffix("rad") {
        (v, false)
    } else {
        (s, true)
    };
    let v: f64 = num
        .trim()
        .parse()
        .map_err(|e| format!("bad angle '{s}': {e}"))?;
    Ok(if to_rad { v.to_radians() } else { v })
}

fn labels_path(truth: &Path) -> PathBuf {
    let mut name = truth.as_os_str().to_owned();
    name.push(".labels.jsonl");
    PathBuf::from(name)
}

fn run(args: RunArgs) -> Result<(), CliError> {
    let mut cfg = PipelineConfig::new(args.height);
    cfg.gpe.pitch_tolerance = args.theta;
    cfg.gpe.orthogonality_tolerance = args.theta;
    cfg.gpe.inlier_threshold = args.dthresh;
    cfg.gpe.ransac_iterations = args.ransac_iters;
    cfg.gpa.inlier_threshold = args.dthresh;
    cfg.gpa.window = args.window;
    cfg.filter.window = args.smooth;
    cfg.seed = args.seed;
    cfg.backfill = !args.no_backfill;
    let mut pipeline = Pipeline::new(cfg).map_err(|e| CliError::Parse(e.to_string()))?;

    let reader = io::load_frames(&args.input).map_err(|e| io_error(&args.input, e))?;
    let (tx, rx) = mpsc::sync_channel::<Result<FeatureFrame, IoError>>(QUEUE_DEPTH);
    let producer = thread::spawn(move || {
        for item in reader {
            let stop = item.is_err();
            if tx.send(item).is_err() || stop {
                break;
            }
        }
    });

    let mut failure = None;
    for item in rx.iter() {
        let frame = match item {
            Ok(f) => f,
            Err(e) => {
                failure = Some(io_error(&args.input, e));
                break;
            }
        };
        if let Err(e) = pipeline.push(&frame) {
            failure = Some(pipeline_error(e));
            break;
        }
    }
    drop(rx);
    producer
        .join()
        .map_err(|_| CliError::Other("reader thread panicked".into()))?;
    if let Some(e) = failure {
        return Err(e);
    }
    let out = pipeline.finish().map_err(pipeline_error)?;

    let truth = match &args.gt {
        Some(p) => Some(io::load_trajectory(p).map_err(|e| io_error(p, e))?),
        None => None,
    };
    let true_scales: Option<Vec<f64>> = match &args.gt_labels {
        Some(p) => Some(
            io::load_labels(p)
                .map_err(|e| io_error(p, e))?
                .iter()
                .map(|l| l.true_scale)
                .collect(),
        ),
        None => None,
    };
    let report = evaluate(&out, truth.as_ref(), true_scales.as_deref());

    io::save_trajectory(&args.out_traj, &out.trajectory)
        .map_err(|e| io_error(&args.out_traj, e))?;
    io::save_scales(&args.out_scales, &out.scales).map_err(|e| io_error(&args.out_scales, e))?;
    io::save_report(&args.report, &report).map_err(|e| io_error(&args.report, e))?;

    eprintln!(
        "{} frames ({} fresh), length {:.3}, {:.1} frames/s",
        report.frames,
        report.fresh_frames,
        report.recovered_length,
        report.timings.frames_per_second
    );
    if let Some(r) = report.rle {
        eprintln!("RLE {r:.3}%");
    }
    Ok(())
}

fn pipeline_error(e: PipelineError) -> CliError {
    match e {
        PipelineError::InvalidConfig(m) => CliError::Parse(m),
        other => CliError::Pipeline(other.to_string()),
    }
}

fn synth(args: SynthArgs) -> Result<(), CliError> {
    let scene = SyntheticScene {
        camera_height: args.height,
        features_per_frame: args.features,
        clutter_fraction: args.clutter,
        moving_fraction: args.moving,
        pixel_noise: args.noise,
        depth_noise: args.depth_noise,
        script: motion_script(args.preset, args.frames, 1.0),
        ..SyntheticScene::from_preset(args.preset, 0, args.scale, args.seed)
    };
    let seq = generate_scene(&scene).map_err(|e| CliError::Parse(e.to_string()))?;
    io::save_frames(&args.out, &seq.frames).map_err(|e| io_error(&args.out, e))?;
    io::save_trajectory(&args.out_truth, &seq.truth).map_err(|e| io_error(&args.out_truth, e))?;
    let labels: Vec<FrameLabels> = seq
        .frames
        .iter()
        .zip(seq.labels)
        .zip(&seq.true_scales)
        .map(|((f, labels), &s)| FrameLabels {
            id: f.id,
            true_scale: s,
            labels,
        })
        .collect();
    let lp = labels_path(&args.out_truth);
    io::save_labels(&lp, &labels).map_err(|e| io_error(&lp, e))?;
    Ok(())
}

fn eval(args: EvalArgs) -> Result<(), CliError> {
    let est: Trajectory = io::load_trajectory(&args.est).map_err(|e| io_error(&args.est, e))?;
    let gt: Trajectory = io::load_trajectory(&args.gt).map_err(|e| io_error(&args.gt, e))?;
    let (l_est, l_gt) = (trajectory_length(&est), trajectory_length(&gt));
    let e = rle(l_gt, l_est).map_err(|e| CliError::Pipeline(e.to_string()))?;
    println!("RLE: {e:.3}%");
    println!("| Frames | GT (m) | Ours (m) | RLE (%) |");
    println!("|-------:|-------:|---------:|--------:|");
    println!("| {} | {l_gt:.3} | {l_est:.3} | {e:.3} |", est.len());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Synth(a) => synth(a),
        Command::Eval(a) => eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
