use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use sdn_core::augment::{run_stage, AugmentStageConfig, Stage};
use sdn_core::dataset::{
    from_crop_frame, load_gray_crop, load_gray_image, read_manifest, FaceSample, ImageRef,
    SampleMeta,
};
use sdn_core::eval::{ced_curve, evaluate_model, evaluate_predictions, time_forward, EvalReport};
use sdn_core::model::{forward_single, load_weights, load_weights_expecting, save_weights};
use sdn_core::train::{read_config, run_single_stage, run_three_stage, TrainError};
use sdn_core::{par, Affine2, BBox, CoordinateFrame, LandmarkSet};

const FORMATS: &str = "\
MANIFEST FORMAT
  Header lines, then one tab-separated record per sample:
    #n_landmarks=<N>
    #left_eye=<index>
    #right_eye=<index>
    #mirror_perm=<p0>,<p1>,...,<pN-1>     (must be an involution)
    <sample_id> TAB <image_path> TAB <x>,<y>,<w>,<h> TAB <landmarks> TAB <tags>
  <landmarks> is a .pts file path or inline:x,y;x,y;...
  <tags> is - or key=value pairs joined by ';' (src=<id>, warp=a,b,c,d,tx,ty).
  Relative paths resolve against the manifest's directory.

TRAINING CONFIG (TOML)
  [network]            input_side, groups = [[k, c1, c2] x3], fc_hidden, seed
  [hard_examples]      source_manifest, threshold (0.02), seed (3)
  [[stage]]            name, manifest, policy = fixed|step|inv, base_lr,
                       gamma, step_size, power, batch_size (64),
                       max_iterations, init_from, checkpoint_every (0),
                       shuffle_seed, momentum (0), loss = euclidean|squared
  A last stage without a manifest trains on hard examples mined from
  source_manifest with the previous stage's weights.

EXIT CODES
  0 success, 2 usage or input error, 3 numerical failure";

#[derive(Parser)]
#[command(
    name = "sdn",
    version,
    about = "Facial landmark regression with a single deep network"
)]
#[command(after_long_help = FORMATS)]
struct Cli {
    /// Worker threads; 1 runs everything sequentially (byte-reproducible), 0 uses all cores.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Print only results and errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an augmented manifest for one training stage.
    Augment(AugmentArgs),
    /// Train all configured stages, or one of them.
    Train(TrainArgs),
    /// Score a model (or a predictions manifest) against a labelled manifest.
    Eval(EvalArgs),
    /// Predict landmarks for one face box in an image.
    Detect(DetectArgs),
    /// Cumulative error distribution from an errors.csv file.
    Curve(CurveArgs),
}

#[derive(Args)]
struct AugmentArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// s1, s2 or s3.
    #[arg(long)]
    stage: Stage,
    /// Output manifest; the provenance log is written next to it.
    #[arg(long)]
    out: PathBuf,
    /// Trained weights, required for s3 (hard-example selection).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Seed for the expansion ratios (defaults: s1 1, s2 2, s3 3).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory for checkpoints and logs.
    #[arg(long)]
    out: PathBuf,
    /// Run only this stage.
    #[arg(long)]
    stage: Option<String>,
    /// Continue a single stage from a checkpoint (.sdnw or .ckpt).
    #[arg(long, requires = "stage")]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Labelled manifest.
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory for errors.csv, ced.csv and summary.csv.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, required_unless_present = "predictions")]
    weights: Option<PathBuf>,
    /// Score this manifest's landmarks instead of running a model.
    #[arg(long, conflicts_with = "weights")]
    predictions: Option<PathBuf>,
    /// Also time this many single-image forward passes (fills the fps column).
    #[arg(long)]
    timing_runs: Option<usize>,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    image: PathBuf,
    /// Face box in image pixels: x,y,w,h.
    #[arg(long, allow_hyphen_values = true)]
    bbox: BBox,
}

#[derive(Args)]
struct CurveArgs {
    #[arg(long)]
    errors: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Grid spacing.
    #[arg(long, default_value_t = 0.002)]
    step: f64,
    /// Last grid point.
    #[arg(long, default_value_t = 0.10)]
    max: f64,
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn input(e: impl std::fmt::Display) -> Self {
        Failure {
            code: 2,
            message: e.to_string(),
        }
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        Failure {
            code: if e.is_numerical() { 3 } else { 2 },
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        par::configure_threads(cli.threads);
    }
    let quiet = cli.quiet;
    let result = match cli.command {
        Command::Augment(a) => augment(a, quiet),
        Command::Train(a) => train(a, quiet),
        Command::Eval(a) => eval(a, quiet),
        Command::Detect(a) => detect(a),
        Command::Curve(a) => curve(a, quiet),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn augment(a: AugmentArgs, quiet: bool) -> CmdResult {
    if a.stage == Stage::S3 && a.model.is_none() {
        return Err(Failure::input(
            "stage s3 selects hard examples and needs --model <weights.sdnw>",
        ));
    }
    let manifest = read_manifest(&a.manifest).map_err(Failure::input)?;
    let model = match &a.model {
        Some(p) => Some(load_weights_expecting(p, manifest.n_landmarks).map_err(Failure::input)?),
        None => None,
    };
    let mut cfg = AugmentStageConfig::defaults(a.stage);
    if let Some(seed) = a.seed {
        cfg.rng_seed = seed;
    }
    let out = run_stage(&manifest, &cfg, model.as_ref()).map_err(Failure::input)?;
    for w in &out.warnings {
        eprintln!("warning: {w}");
    }
    let prov = out.write(&a.out).map_err(Failure::input)?;
    if !quiet {
        println!(
            "{} samples from {} sources -> {} (provenance: {})",
            out.manifest.entries.len(),
            manifest.entries.len(),
            a.out.display(),
            prov.display()
        );
    }
    Ok(())
}

fn train(a: TrainArgs, quiet: bool) -> CmdResult {
    let config = read_config(&a.config)?;
    fs::create_dir_all(&a.out).map_err(|e| Failure::input(format!("{}: {e}", a.out.display())))?;
    let stage = match (&a.stage, config.stages.len()) {
        (Some(s), _) => Some(s.clone()),
        (None, 1) => Some(config.stages[0].name.clone()),
        (None, _) => None,
    };
    let (weights, logs, notices) = match stage {
        Some(name) => {
            let (w, log) = run_single_stage(&config, &name, &a.out, a.resume.as_deref())?;
            (w, vec![log], Vec::new())
        }
        None => {
            let r = run_three_stage(&config, &a.out)?;
            (r.weights, r.logs, r.notices)
        }
    };
    for n in &notices {
        eprintln!("notice: {n}");
    }
    let final_path = a.out.join("final.sdnw");
    save_weights(&weights, &final_path).map_err(Failure::input)?;
    if !quiet {
        for log in &logs {
            let last = log.entries.last().map_or(f64::NAN, |e| e.loss);
            println!(
                "stage {}: {} iterations, final loss {last}, checkpoint {}",
                log.stage,
                log.entries.len(),
                log.final_checkpoint()
                    .map_or("-".into(), |p| p.display().to_string())
            );
        }
        println!("weights -> {}", final_path.display());
    }
    Ok(())
}

fn eval(a: EvalArgs, quiet: bool) -> CmdResult {
    let manifest = read_manifest(&a.manifest).map_err(Failure::input)?;
    let mut report: EvalReport = match (&a.predictions, &a.weights) {
        (Some(p), _) => {
            let pred = read_manifest(p).map_err(Failure::input)?;
            evaluate_predictions(&pred, &manifest).map_err(Failure::input)?
        }
        (None, Some(w)) => {
            let ws = load_weights_expecting(w, manifest.n_landmarks).map_err(Failure::input)?;
            let mut r = evaluate_model(&ws, &manifest).map_err(Failure::input)?;
            if let Some(n) = a.timing_runs {
                r.timing = Some(time_forward(&ws, 3, n.max(1)).map_err(Failure::input)?);
            }
            r
        }
        (None, None) => unreachable!("clap requires one of --weights/--predictions"),
    };
    if a.predictions.is_some() && a.timing_runs.is_some() {
        report.timing = None;
        eprintln!("warning: --timing-runs needs --weights; fps left as NA");
    }
    report.write_csv(&a.out).map_err(Failure::input)?;
    if !quiet {
        println!(
            "images {}  mean NRMSE {:.6} ({:.2} x100)  failure rate {:.2}% ({} > {})",
            report.total_count,
            report.mean_nrmse,
            report.mean_nrmse * 100.0,
            report.failure_rate,
            report.failure_count,
            report.failure_threshold
        );
        if let Some(t) = report.timing {
            println!(
                "forward pass: mean {:.2} ms, median {:.2} ms, {:.1} fps",
                t.mean_ms,
                t.median_ms,
                t.fps()
            );
        }
    }
    Ok(())
}

fn detect(a: DetectArgs) -> CmdResult {
    if !a.bbox.is_valid() {
        return Err(Failure::input(format!("invalid --bbox {}", a.bbox)));
    }
    let ws = load_weights(&a.weights).map_err(Failure::input)?;
    let image = Arc::new(load_gray_image(&a.image).map_err(Failure::input)?);
    let n = ws.spec().n_landmarks;
    let sample = FaceSample {
        image: ImageRef::Memory(Arc::clone(&image)),
        bbox: a.bbox,
        landmarks: LandmarkSet::new(vec![a.bbox.center(); n], CoordinateFrame::ImagePixels),
        warp: Affine2::IDENTITY,
        meta: SampleMeta::default(),
    };
    let input =
        load_gray_crop(&image, &sample, &a.bbox, ws.spec().input_side).map_err(Failure::input)?;
    let out = forward_single(&ws, &input.pixels).map_err(Failure::input)?;
    let flat: Vec<f64> = out.data().iter().map(|&v| v as f64).collect();
    let unit = LandmarkSet::from_flat(&flat, CoordinateFrame::CropUnit);
    let pixels = from_crop_frame(&unit, &input.crop_transform);
    let mut s = String::new();
    for p in pixels.points() {
        writeln!(s, "{} {}", p.x, p.y).unwrap();
    }
    print!("{s}");
    Ok(())
}

fn read_errors(path: &Path) -> Result<Vec<f64>, Failure> {
    let text =
        fs::read_to_string(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    let mut errors = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 && line.starts_with("sample_id") || line.trim().is_empty() {
            continue;
        }
        let value = line
            .rsplit(',')
            .next()
            .and_then(|v| v.trim().parse::<f64>().ok())
            .filter(|v| v.is_finite())
            .ok_or_else(|| {
                Failure::input(format!(
                    "{}:{}: expected <id>,<error>",
                    path.display(),
                    i + 1
                ))
            })?;
        errors.push(value);
    }
    Ok(errors)
}

fn curve(a: CurveArgs, quiet: bool) -> CmdResult {
    if !(a.step > 0.0 && a.max >= 0.0) {
        return Err(Failure::input(
            "--step must be positive and --max non-negative",
        ));
    }
    let errors = read_errors(&a.errors)?;
    let n = (a.max / a.step + 1e-9).floor() as usize;
    let grid: Vec<f64> = (0..=n).map(|i| i as f64 * a.step).collect();
    let ced = ced_curve(&errors, &grid).map_err(Failure::input)?;
    let mut s = String::from("threshold,fraction\n");
    for (t, f) in &ced {
        writeln!(s, "{t},{f}").unwrap();
    }
    fs::write(&a.out, s).map_err(|e| Failure::input(format!("{}: {e}", a.out.display())))?;
    if !quiet {
        println!(
            "{} errors, {} grid points -> {}",
            errors.len(),
            ced.len(),
            a.out.display()
        );
    }
    Ok(())
}
