//! The `depthfuse` command line.
//!
//! Exit codes: 0 success, 1 invalid flags or inputs, 2 failure while
//! working. Errors and warnings go to stderr as one JSON object per line.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use depthfuse_core::densify::{densify, DensifyConfig, Solver};
use depthfuse_core::geometry::project_points;
use depthfuse_core::gradcheck::run_suite;
use depthfuse_core::image::{DepthMap, RgbImage};
use depthfuse_core::metrics::DivisorConvention;
use depthfuse_core::model::{decode_prediction, FusionMode, ModelConfig};
use depthfuse_core::synth::WeatherMix;
use depthfuse_core::batch::{images_to_tensor, sparse_to_tensor};
use serde_json::json;

use crate::bench::{run_bench, BenchConfig};
use crate::config::RunConfig;
use crate::dataset::{generate_split, list_split, load_split, GenerateConfig};
use crate::eval::evaluate_split;
use crate::experiments::{find, registry, run_experiment};
use crate::formats::{
    read_calibration, read_checkpoint, read_pgm_depth, read_point_cloud, read_ppm, write_pgm_depth, write_ppm,
};
use crate::training::{initial_state, train_to_dir, TrainError};

#[derive(Parser, Debug)]
#[command(name = "depthfuse", version, about = "Sparse-to-dense depth completion from camera RGB and radar/lidar returns")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic split.
    GenData(GenDataArgs),
    /// Train a model on a split, writing a log and per-epoch checkpoints.
    Train(TrainArgs),
    /// Predict a depth map for one image.
    Predict(PredictArgs),
    /// Evaluate a checkpoint on a split.
    Eval(EvalArgs),
    /// Rasterize a point cloud into a sparse depth map.
    Project(ProjectArgs),
    /// Fill a sparse depth map guided by an image.
    Densify(DensifyArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
    /// Time forward passes.
    Bench(BenchArgs),
    /// Run registered experiments and check their assertions.
    Repro(ReproArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// 160x96 input, 16 base channels.
    Default,
    /// 48x32 input used by the experiments.
    Tiny,
}

impl Preset {
    fn model(self) -> ModelConfig {
        match self {
            Preset::Default => ModelConfig::default(),
            Preset::Tiny => ModelConfig::tiny(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Divisor {
    Gt,
    Pred,
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub count: usize,
    #[arg(long, default_value_t = 160)]
    pub width: usize,
    #[arg(long, default_value_t = 96)]
    pub height: usize,
    /// Weather weights, e.g. `day:0.5,fog:0.5`.
    #[arg(long, default_value = "day")]
    pub weather_mix: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    /// Split validated after every epoch.
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Preset::Default)]
    pub preset: Preset,
    /// `key=value` file applied after the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `KEY=VALUE` override applied after the file; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub fusion: Option<String>,
    /// Sets the model, shuffle and augmentation seeds.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub rgb: PathBuf,
    #[arg(long)]
    pub sparse: Option<PathBuf>,
    /// 16-bit depth PGM.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional false-color PPM of the prediction (not metric).
    #[arg(long)]
    pub colormap: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long, value_enum, default_value_t = Divisor::Gt)]
    pub ard_divisor: Divisor,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub jsonl: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ProjectArgs {
    /// `x,y,z[,intensity]` CSV in the sensor frame.
    #[arg(long)]
    pub cloud: PathBuf,
    /// Intrinsics and sensor-to-camera pose as `key=value` lines.
    #[arg(long)]
    pub calib: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct DensifyArgs {
    #[arg(long)]
    pub sparse: PathBuf,
    #[arg(long)]
    pub guide: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// `gs` or `cg`.
    #[arg(long, default_value = "gs")]
    pub solver: String,
    #[arg(long)]
    pub sigma_min: Option<f64>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Random seeds per case.
    #[arg(long, default_value_t = depthfuse_core::gradcheck::DEFAULT_SEEDS)]
    pub seeds: u64,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, value_enum, default_value_t = Preset::Default)]
    pub preset: Preset,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    #[arg(long, default_value_t = 1)]
    pub batch: usize,
    #[arg(long, default_value_t = 10)]
    pub iterations: usize,
    #[arg(long, default_value_t = 1)]
    pub warmup: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Print JSON instead of text.
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug)]
pub struct ReproArgs {
    /// Experiment to run; repeatable, all registered experiments if absent.
    #[arg(long = "experiment")]
    pub experiments: Vec<String>,
    /// Working directory for data, runs and reports.
    #[arg(long)]
    pub work: PathBuf,
    /// Replaces the experiments' data and training seeds.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    fn to_json(&self) -> String {
        let (kind, message) = match self {
            CliError::Validation(m) => ("validation", m),
            CliError::Runtime(m) => ("runtime", m),
        };
        json!({ "error": kind, "message": message }).to_string()
    }
}

fn invalid(e: impl ToString) -> CliError {
    CliError::Validation(e.to_string())
}

fn failed(e: impl ToString) -> CliError {
    CliError::Runtime(e.to_string())
}

fn warn(message: &str) {
    eprintln!("{}", json!({ "warning": message }));
}

fn require_file(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Validation(format!("{}: no such file", path.display())))
    }
}

fn require_dir(path: &Path) -> Result<(), CliError> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(CliError::Validation(format!("{}: no such directory", path.display())))
    }
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprintln!("{}", CliError::Validation(e.render().to_string().trim().to_string()).to_json());
            return 1;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}

pub fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Eval(a) => eval(a),
        Command::Project(a) => project(a),
        Command::Densify(a) => densify_cmd(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Bench(a) => bench(a),
        Command::Repro(a) => repro(a),
    }
}

fn gen_data(a: GenDataArgs) -> Result<(), CliError> {
    let mix = WeatherMix::parse(&a.weather_mix).map_err(invalid)?;
    if a.count == 0 || a.width == 0 || a.height == 0 {
        return Err(invalid("count, width and height must be positive"));
    }
    let cfg = GenerateConfig { count: a.count, width: a.width, height: a.height, mix, seed: a.seed };
    let paths = generate_split(&cfg, &a.out).map_err(failed)?;
    println!("{}", json!({ "generated": paths.len(), "out": a.out.display().to_string() }));
    Ok(())
}

fn build_run_config(a: &TrainArgs, base: ModelConfig) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig { model: base, ..RunConfig::default() };
    if let Some(path) = &a.config {
        require_file(path)?;
        cfg.apply_file(path).map_err(invalid)?;
    }
    for pair in &a.sets {
        cfg.set_pair(pair).map_err(invalid)?;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(f) = &a.fusion {
        cfg.model.fusion_mode = FusionMode::parse(f).ok_or_else(|| invalid(format!("unknown fusion mode `{f}`")))?;
    }
    if let Some(s) = a.seed {
        cfg.set_seed(s);
    }
    cfg.validate().map_err(invalid)?;
    Ok(cfg)
}

fn train(a: TrainArgs) -> Result<(), CliError> {
    require_dir(&a.train)?;
    if let Some(v) = &a.val {
        require_dir(v)?;
    }
    let resumed = match &a.resume {
        Some(path) => {
            require_file(path)?;
            Some(read_checkpoint(path).map_err(invalid)?)
        }
        None => None,
    };
    let base = resumed.as_ref().map_or_else(|| a.preset.model(), |s| s.model.config().clone());
    let cfg = build_run_config(&a, base)?;
    let state = match resumed {
        Some(state) => {
            if state.model.config() != &cfg.model {
                return Err(invalid("model settings differ from the resumed checkpoint"));
            }
            if state.epoch >= cfg.train.epochs {
                return Err(invalid(format!("checkpoint is at epoch {}, nothing left of {}", state.epoch, cfg.train.epochs)));
            }
            state
        }
        None => initial_state(&cfg).map_err(invalid)?,
    };
    let train_set = load_split(&a.train).map_err(invalid)?;
    let val_set = match &a.val {
        Some(v) => load_split(v).map_err(invalid)?,
        None => Vec::new(),
    };
    std::fs::create_dir_all(&a.out).map_err(|e| failed(format!("{}: {e}", a.out.display())))?;
    let config_path = a.out.join("config.txt");
    std::fs::write(&config_path, cfg.to_text()).map_err(|e| failed(format!("{}: {e}", config_path.display())))?;
    let result = train_to_dir(&cfg, state, &train_set, &val_set, &a.out, |log| {
        println!("{}", serde_json::to_string(log).expect("log serializes"));
    });
    match result {
        Ok(_) => Ok(()),
        Err(e @ (TrainError::Config(_) | TrainError::SampleSize { .. })) => Err(invalid(e)),
        Err(e) => Err(failed(e)),
    }
}

/// Fixed false-color ramp from far (dark blue) to near (red) over the
/// normalized reciprocal depth.
const COLORMAP: [[f32; 3]; 5] = [
    [0.05, 0.03, 0.35],
    [0.10, 0.35, 0.85],
    [0.15, 0.80, 0.75],
    [0.95, 0.85, 0.15],
    [0.85, 0.10, 0.05],
];

pub fn colorize(t: f64) -> [f32; 3] {
    let x = t.clamp(0.0, 1.0) * (COLORMAP.len() - 1) as f64;
    let i = (x.floor() as usize).min(COLORMAP.len() - 2);
    let f = (x - i as f64) as f32;
    let (a, b) = (COLORMAP[i], COLORMAP[i + 1]);
    let g = 1.0 - f;
    [a[0] * g + b[0] * f, a[1] * g + b[1] * f, a[2] * g + b[2] * f]
}

fn predict(a: PredictArgs) -> Result<(), CliError> {
    require_file(&a.checkpoint)?;
    require_file(&a.rgb)?;
    let state = read_checkpoint(&a.checkpoint).map_err(invalid)?;
    let model = state.model;
    let mode = model.config().fusion_mode;
    let rgb = read_ppm(&a.rgb).map_err(invalid)?;
    let sparse = match (&a.sparse, mode.uses_sparse()) {
        (Some(p), true) => {
            require_file(p)?;
            read_pgm_depth(p).map_err(invalid)?
        }
        (Some(_), false) => {
            warn("checkpoint uses fusion mode `rgb`; the sparse input is ignored");
            DepthMap::new(rgb.width, rgb.height)
        }
        (None, true) => {
            return Err(invalid(format!("checkpoint uses fusion mode `{}`, which needs --sparse", mode.name())));
        }
        (None, false) => DepthMap::new(rgb.width, rgb.height),
    };
    let (w, h) = (model.config().input_width, model.config().input_height);
    if (rgb.width, rgb.height) != (w, h) || (sparse.width, sparse.height) != (w, h) {
        return Err(invalid(format!(
            "inputs are {}x{} (rgb) and {}x{} (sparse), model expects {w}x{h}",
            rgb.width, rgb.height, sparse.width, sparse.height
        )));
    }
    let codec = model.config().codec();
    let rgb_t = images_to_tensor::<f32>(&[&rgb]).map_err(failed)?;
    let sparse_t = sparse_to_tensor::<f32>(&[&sparse], &codec).map_err(failed)?;
    let out = model.infer(&rgb_t, mode.uses_sparse().then_some(&sparse_t)).map_err(failed)?;
    let depth = decode_prediction(&out, &codec).remove(0);
    write_pgm_depth(&a.out, &depth).map_err(failed)?;
    if let Some(path) = &a.colormap {
        let mut img = RgbImage::new(w, h);
        for (i, v) in out.data().iter().enumerate() {
            img.set_pixel(i % w, i / w, colorize(f64::from(*v)));
        }
        write_ppm(path, &img).map_err(failed)?;
    }
    println!("{}", json!({ "out": a.out.display().to_string(), "width": w, "height": h }));
    Ok(())
}

fn eval(a: EvalArgs) -> Result<(), CliError> {
    require_file(&a.checkpoint)?;
    require_dir(&a.split)?;
    let divisor = match a.ard_divisor {
        Divisor::Gt => DivisorConvention::Groundtruth,
        Divisor::Pred => DivisorConvention::Prediction,
    };
    let state = read_checkpoint(&a.checkpoint).map_err(invalid)?;
    list_split(&a.split).map_err(invalid)?;
    let outcome = evaluate_split(&state.model, &a.split, divisor).map_err(failed)?;
    for id in &outcome.skipped {
        warn(&format!("sample `{id}` has no groundtruth and was skipped"));
    }
    if let Some(p) = &a.csv {
        std::fs::write(p, outcome.to_csv()).map_err(|e| failed(format!("{}: {e}", p.display())))?;
    }
    if let Some(p) = &a.jsonl {
        std::fs::write(p, outcome.to_json_lines()).map_err(|e| failed(format!("{}: {e}", p.display())))?;
    }
    let summary = outcome.to_json_lines();
    println!("{}", summary.lines().last().unwrap_or_default());
    Ok(())
}

fn project(a: ProjectArgs) -> Result<(), CliError> {
    require_file(&a.cloud)?;
    require_file(&a.calib)?;
    let cloud = read_point_cloud(&a.cloud).map_err(invalid)?;
    let calib = read_calibration(&a.calib).map_err(invalid)?;
    let sparse = project_points(&cloud, &calib.pose, &calib.intrinsics);
    write_pgm_depth(&a.out, &sparse).map_err(failed)?;
    println!("{}", json!({ "points": cloud.len(), "pixels": sparse.nonzero_count() }));
    Ok(())
}

fn densify_cmd(a: DensifyArgs) -> Result<(), CliError> {
    require_file(&a.sparse)?;
    require_file(&a.guide)?;
    let mut cfg = DensifyConfig {
        solver: Solver::parse(&a.solver).ok_or_else(|| invalid(format!("unknown solver `{}`", a.solver)))?,
        ..DensifyConfig::default()
    };
    if let Some(v) = a.sigma_min {
        cfg.sigma_min = v;
    }
    if let Some(v) = a.tolerance {
        cfg.tolerance = v;
    }
    if let Some(v) = a.max_iterations {
        cfg.max_iterations = v;
    }
    cfg.validate().map_err(invalid)?;
    let sparse = read_pgm_depth(&a.sparse).map_err(invalid)?;
    let guide = read_ppm(&a.guide).map_err(invalid)?;
    let out = densify(&sparse, &guide, &cfg).map_err(invalid)?;
    if !out.converged {
        warn(&format!(
            "solver stopped after {} iterations at relative residual {:e}",
            out.iterations, out.relative_residual
        ));
    }
    write_pgm_depth(&a.out, &out.depth).map_err(failed)?;
    println!(
        "{}",
        json!({ "converged": out.converged, "iterations": out.iterations, "relative_residual": out.relative_residual })
    );
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> Result<(), CliError> {
    if a.seeds == 0 {
        return Err(invalid("--seeds must be at least 1"));
    }
    let report = run_suite(a.seeds);
    print!("{report}");
    if report.passed() {
        Ok(())
    } else {
        Err(failed("gradient check failed"))
    }
}

fn bench(a: BenchArgs) -> Result<(), CliError> {
    let mut cfg = RunConfig { model: a.preset.model(), ..RunConfig::default() };
    for pair in &a.sets {
        cfg.set_pair(pair).map_err(invalid)?;
    }
    cfg.model.validate().map_err(invalid)?;
    let bench = BenchConfig { model: cfg.model, batch: a.batch, warmup: a.warmup, iterations: a.iterations, seed: a.seed };
    if bench.batch == 0 || bench.iterations == 0 {
        return Err(invalid("--batch and --iterations must be at least 1"));
    }
    let report = run_bench(&bench).map_err(failed)?;
    if a.json {
        println!("{}", serde_json::to_string(&report).expect("report serializes"));
    } else {
        println!("{report}");
    }
    Ok(())
}

fn repro(a: ReproArgs) -> Result<(), CliError> {
    let specs = if a.experiments.is_empty() {
        registry()
    } else {
        a.experiments
            .iter()
            .map(|n| find(n).ok_or_else(|| invalid(format!("unknown experiment `{n}`"))))
            .collect::<Result<_, _>>()?
    };
    let mut all_passed = true;
    for spec in specs {
        let spec = match a.seed {
            Some(s) => spec.with_seed(s),
            None => spec,
        };
        let dir = a.work.join(spec.name);
        let report = run_experiment(&spec, &dir, |msg| eprintln!("{}", json!({ "progress": msg }))).map_err(failed)?;
        let write = |name: &str, text: String| {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| failed(format!("{}: {e}", p.display())))
        };
        write("report.json", report.to_json())?;
        write("report.txt", report.to_string())?;
        print!("{report}");
        all_passed &= report.passed();
    }
    if all_passed {
        Ok(())
    } else {
        Err(failed("an experiment assertion failed"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn colormap_endpoints() {
        assert_eq!(colorize(0.0), COLORMAP[0]);
        assert_eq!(colorize(1.0), COLORMAP[4]);
        assert_eq!(colorize(-3.0), COLORMAP[0]);
    }

    #[test]
    fn bad_flags_exit_1() {
        assert_eq!(run(["depthfuse", "nope"]), 1);
        assert_eq!(run(["depthfuse", "gen-data"]), 1);
        assert_eq!(run(["depthfuse", "--help"]), 0);
    }
}
