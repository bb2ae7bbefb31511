//! The `ndf` command line.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::body::PoseParams;
use crate::config::{ConfigError, RunConfig};
use crate::imaging::Image;
use crate::metrics::{evaluate, EvalReport, GroundTruthModel, MetricsError, NetModel, Split};
use crate::nets::{FieldNets, NetError};
use crate::projection::closest_point;
use crate::render::{candidate_depths, ray_bounds, render_frame, Camera, FrameSet, RenderError};
use crate::scene::{generate_dataset, load_dataset, save_dataset, FrameDataset, SceneError};
use crate::train::{
    load_checkpoint, save_checkpoint, AblationMode, LogHeader, TrainError, TrainState, Trainer, TrainingConfig,
    TrainingLog,
};

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    /// Numerical or rendering failure at run time.
    pub const FAILURE: i32 = 1;
    /// Bad arguments or configuration.
    pub const USAGE: i32 = 2;
    /// Output already exists and `--force` was not given.
    pub const EXISTS: i32 = 3;
    /// A file could not be read or written.
    pub const IO: i32 = 4;
    /// A dataset, checkpoint or pose file is malformed or incompatible.
    pub const DATA: i32 = 5;
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    fn usage(message: impl Into<String>) -> Self {
        Self::new(exit::USAGE, message)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        let code = match e {
            ConfigError::Read { .. } => exit::IO,
            _ => exit::USAGE,
        };
        Self::new(code, e.to_string())
    }
}

impl From<SceneError> for CliError {
    fn from(e: SceneError) -> Self {
        let code = match &e {
            SceneError::Exists(_) => exit::EXISTS,
            SceneError::Io { .. } => exit::IO,
            SceneError::Manifest(_) | SceneError::Image(_) | SceneError::Body(_) => exit::DATA,
            SceneError::Invalid(_) => exit::USAGE,
            _ => exit::FAILURE,
        };
        Self::new(code, e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        let code = match &e {
            TrainError::Io { .. } => exit::IO,
            TrainError::Checkpoint(_) | TrainError::Version { .. } | TrainError::Net(NetError::Archive(_)) => {
                exit::DATA
            }
            TrainError::Net(NetError::MissingTensor(_)) => exit::DATA,
            TrainError::Config(_) | TrainError::UnknownMode(_) | TrainError::EmptyTrainSplit => exit::USAGE,
            TrainError::Scene(_) => return CliError::from(match e {
                TrainError::Scene(s) => s,
                _ => unreachable!(),
            }),
            _ => exit::FAILURE,
        };
        Self::new(code, e.to_string())
    }
}

impl From<RenderError> for CliError {
    fn from(e: RenderError) -> Self {
        let code = match &e {
            RenderError::Io { .. } => exit::IO,
            RenderError::PixelOutOfBounds { .. } | RenderError::UnknownFrame(_) => exit::USAGE,
            _ => exit::FAILURE,
        };
        Self::new(code, e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        let code = match &e {
            MetricsError::Io { .. } => exit::IO,
            MetricsError::EmptySplit(_) | MetricsError::UnknownSplit(_) => exit::USAGE,
            _ => exit::FAILURE,
        };
        Self::new(code, e.to_string())
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::new(exit::IO, format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "ndf", version, about = "Pose-conditioned surface radiance fields on a synthetic articulated body")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// TOML run configuration; defaults are used for missing keys.
    #[arg(long, short = 'c')]
    pub config: Option<PathBuf>,
    /// Override one config key, e.g. `--set train.iterations=200`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Worker threads (overrides `workers`).
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic multi-view dataset.
    GenScene {
        #[command(flatten)]
        common: Common,
        /// Dataset directory (default: paths.dataset).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Train the field networks on a dataset.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Run directory (default: paths.output/<mode>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Ablation mode (overrides train.mode).
        #[arg(long)]
        mode: Option<AblationMode>,
        /// Continue from the run directory's latest checkpoint.
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        force: bool,
    },
    /// Render images from a checkpoint.
    Render {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Output directory (default: paths.output/renders).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Dataset frame to take the pose from.
        #[arg(long, group = "pose_source")]
        frame: Option<usize>,
        /// JSON file with `root_translation` and `joint_rotations`.
        #[arg(long, group = "pose_source")]
        pose_file: Option<PathBuf>,
        /// Index into the dataset's scripted novel poses.
        #[arg(long, group = "pose_source")]
        novel: Option<usize>,
        /// Dataset camera index.
        #[arg(long, group = "view")]
        camera: Option<usize>,
        /// Render `render.orbit_views` cameras on the rig circle.
        #[arg(long, group = "view")]
        orbit: bool,
    },
    /// Score a checkpoint on the held-out splits.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, required_unless_present = "ground_truth_as_model")]
        checkpoint: Option<PathBuf>,
        /// Score the ground truth against itself.
        #[arg(long)]
        ground_truth_as_model: bool,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// `novel_view`, `novel_pose` or `all`.
        #[arg(long, default_value = "all")]
        split: String,
        /// Report file (default: paths.output/eval.toml).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate every ablation mode.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Modes to run (default: all five).
        #[arg(long, value_delimiter = ',')]
        modes: Vec<AblationMode>,
        /// Retrain modes that already have a finished model.
        #[arg(long)]
        force: bool,
    },
    /// Print the surface projection of every candidate sample along one pixel's ray.
    InspectProjection {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        frame: usize,
        #[arg(long, default_value_t = 0)]
        camera: usize,
        #[arg(long, num_args = 2, value_names = ["X", "Y"])]
        pixel: Vec<u32>,
    },
}

fn load_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut config = RunConfig::load(common.config.as_deref(), &common.overrides)?;
    if let Some(w) = common.workers {
        config.workers = w;
    }
    Ok(config)
}

fn write_effective_config(dir: &Path, config: &RunConfig) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    let path = dir.join("config.toml");
    std::fs::write(&path, config.to_toml()).map_err(|e| io_error(&path, e))
}

fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::new(exit::FAILURE, e.to_string()))?;
    Ok(pool.install(f))
}

/// Parses arguments, runs the command and returns the exit code.
/// Diagnostics go to stderr; results to `out`.
pub fn run_with<I, T>(args: I, out: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(text) => {
            let _ = out.write_all(text.as_bytes());
            exit::OK
        }
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

fn dispatch(command: Command) -> Result<String, CliError> {
    let common = match &command {
        Command::GenScene { common, .. }
        | Command::Train { common, .. }
        | Command::Render { common, .. }
        | Command::Eval { common, .. }
        | Command::Ablate { common, .. }
        | Command::InspectProjection { common, .. } => common.clone(),
    };
    let config = load_config(&common)?;
    let workers = config.workers;
    with_workers(workers, move || match command {
        Command::GenScene { out, force, .. } => cmd_gen_scene(&config, out, force),
        Command::Train {
            dataset,
            out,
            mode,
            resume,
            force,
            ..
        } => cmd_train(&config, dataset, out, mode, resume, force),
        Command::Render {
            checkpoint,
            dataset,
            out,
            frame,
            pose_file,
            novel,
            camera,
            orbit,
            ..
        } => cmd_render(
            &config,
            &checkpoint,
            dataset,
            out,
            PoseSource::from_flags(frame, pose_file, novel),
            if orbit { View::Orbit } else { View::Camera(camera.unwrap_or(0)) },
        ),
        Command::Eval {
            checkpoint,
            ground_truth_as_model,
            dataset,
            split,
            out,
            ..
        } => cmd_eval(&config, checkpoint, ground_truth_as_model, dataset, &split, out),
        Command::Ablate {
            dataset, modes, force, ..
        } => cmd_ablate(&config, dataset, &modes, force),
        Command::InspectProjection {
            dataset,
            frame,
            camera,
            pixel,
            ..
        } => {
            let (x, y) = match pixel.as_slice() {
                [x, y] => (*x, *y),
                _ => (config.scene.width / 2, config.scene.height / 2),
            };
            cmd_inspect_projection(&config, dataset, frame, camera, x, y)
        }
    })?
}

pub fn cmd_gen_scene(config: &RunConfig, out: Option<PathBuf>, force: bool) -> Result<String, CliError> {
    let dir = out.unwrap_or_else(|| config.paths.dataset.clone());
    if !force && crate::scene::dir_is_populated(&dir)? {
        return Err(SceneError::Exists(dir.display().to_string()).into());
    }
    let ds = generate_dataset(&config.scene)?;
    save_dataset(&ds, &dir, force)?;
    write_effective_config(&dir, config)?;
    Ok(format!(
        "wrote {} images ({} frames x {} cameras) to {}\n",
        ds.images.len(),
        ds.frame_count(),
        ds.camera_count(),
        dir.display()
    ))
}

fn open_dataset(config: &RunConfig, dataset: Option<PathBuf>) -> Result<FrameDataset, CliError> {
    let dir = dataset.unwrap_or_else(|| config.paths.dataset.clone());
    if !dir.join("manifest.json").is_file() {
        return Err(CliError::new(
            exit::IO,
            format!("{}: no dataset manifest (run gen-scene first)", dir.display()),
        ));
    }
    Ok(load_dataset(&dir)?)
}

/// Summary written next to a finished training run. Wall-clock time lives
/// here rather than in the deterministic log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub mode: AblationMode,
    pub iterations: u64,
    pub initial_held_out_loss: f64,
    pub final_held_out_loss: f64,
    pub seconds: f64,
}

pub const LOG_FILE: &str = "log.jsonl";
pub const LATEST_CHECKPOINT: &str = "latest.ndft";
pub const MODEL_FILE: &str = "model.ndft";
pub const SUMMARY_FILE: &str = "summary.json";

/// Periodic checkpoint written at `iteration`.
pub fn checkpoint_path(run_dir: &Path, iteration: u64) -> PathBuf {
    run_dir.join("checkpoints").join(format!("iter_{iteration:08}.ndft"))
}

pub fn cmd_train(
    config: &RunConfig,
    dataset: Option<PathBuf>,
    out: Option<PathBuf>,
    mode: Option<AblationMode>,
    resume: bool,
    force: bool,
) -> Result<String, CliError> {
    let mut config = config.clone();
    if let Some(m) = mode {
        config.train.mode = m;
    }
    let dir = out.unwrap_or_else(|| config.paths.output.join(config.train.mode.name()));
    let ds = open_dataset(&config, dataset)?;
    let summary = train_run(&config, &ds, &dir, resume, force)?;
    Ok(format!(
        "mode {}: {} iterations, held-out loss {:.6} -> {:.6}, model {}\n",
        summary.mode,
        summary.iterations,
        summary.initial_held_out_loss,
        summary.final_held_out_loss,
        dir.join(MODEL_FILE).display()
    ))
}

/// Trains into `dir`, writing the effective config, the log, periodic and
/// final checkpoints, and a summary.
pub fn train_run(
    config: &RunConfig,
    ds: &FrameDataset,
    dir: &Path,
    resume: bool,
    force: bool,
) -> Result<TrainSummary, CliError> {
    let started = Instant::now();
    let log_path = dir.join(LOG_FILE);
    let latest = dir.join(LATEST_CHECKPOINT);
    let (state, train_config, mut log) = if resume {
        if !latest.is_file() {
            return Err(CliError::new(exit::IO, format!("{}: no checkpoint to resume from", latest.display())));
        }
        let (state, saved) = load_checkpoint(&latest)?;
        if saved.mode != config.train.mode {
            return Err(CliError::usage(format!(
                "checkpoint was trained in mode {}, not {}",
                saved.mode, config.train.mode
            )));
        }
        let log = TrainingLog::resume(&log_path, state.iteration)?;
        (state, saved, log)
    } else {
        if log_path.exists() && !force {
            return Err(CliError::new(
                exit::EXISTS,
                format!("{} already has a training run; use --resume or --force", dir.display()),
            ));
        }
        std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        let trainer = Trainer::new(ds, config.train.clone())?;
        let state = trainer.initial_state();
        let header = LogHeader {
            mode: config.train.mode,
            config: config.train.clone(),
            parameters: state.nets.parameter_count(),
        };
        let log = TrainingLog::create(&log_path, &header)?;
        (state, config.train.clone(), log)
    };
    let mut effective = config.clone();
    effective.train = train_config.clone();
    write_effective_config(dir, &effective)?;

    let trainer = Trainer::new(ds, train_config.clone())?;
    let held = trainer.held_out_rays(config.eval.held_out_rays, train_config.seed ^ 0x5eed);
    let initial = trainer.evaluate_loss(&trainer.initial_state().nets, &held)?;
    let mut state: TrainState = state;
    let log_cell = std::cell::RefCell::new(&mut log);
    trainer.run(
        &mut state,
        train_config.iterations,
        &mut |r| log_cell.borrow_mut().append(r),
        &mut |s| {
            log_cell.borrow_mut().flush()?;
            let numbered = checkpoint_path(dir, s.iteration);
            std::fs::create_dir_all(numbered.parent().expect("has parent")).map_err(|e| crate::train::io_err(dir, e))?;
            save_checkpoint(&numbered, s, &train_config)?;
            save_checkpoint(&latest, s, &train_config)
        },
    )?;
    log.flush()?;
    save_checkpoint(&latest, &state, &train_config)?;
    save_checkpoint(&dir.join(MODEL_FILE), &state, &train_config)?;
    let summary = TrainSummary {
        mode: train_config.mode,
        iterations: state.iteration,
        initial_held_out_loss: initial,
        final_held_out_loss: trainer.evaluate_loss(&state.nets, &held)?,
        seconds: started.elapsed().as_secs_f64(),
    };
    let path = dir.join(SUMMARY_FILE);
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    std::fs::write(&path, text).map_err(|e| io_error(&path, e))?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq)]
pub enum PoseSource {
    Frame(usize),
    File(PathBuf),
    Novel(usize),
}

impl PoseSource {
    fn from_flags(frame: Option<usize>, file: Option<PathBuf>, novel: Option<usize>) -> Self {
        match (frame, file, novel) {
            (_, Some(f), _) => PoseSource::File(f),
            (_, _, Some(n)) => PoseSource::Novel(n),
            (f, _, _) => PoseSource::Frame(f.unwrap_or(0)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum View {
    Camera(usize),
    Orbit,
}

pub fn read_pose_file(path: &Path, joints: usize) -> Result<PoseParams, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let pose: PoseParams = serde_json::from_str(&text)
        .map_err(|e| CliError::new(exit::DATA, format!("{}: {e}", path.display())))?;
    if pose.joint_rotations.len() != joints {
        return Err(CliError::new(
            exit::DATA,
            format!(
                "{}: pose has {} joint rotations, body has {joints} joints",
                path.display(),
                pose.joint_rotations.len()
            ),
        ));
    }
    Ok(pose)
}

fn save_render(image: &Image, dir: &Path, stem: &str, pfm: bool, written: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let png = dir.join(format!("{stem}.png"));
    image
        .save_png(&png)
        .map_err(|e| CliError::new(exit::IO, e.to_string()))?;
    written.push(png);
    if pfm {
        let path = dir.join(format!("{stem}.pfm"));
        image
            .save_pfm(&path)
            .map_err(|e| CliError::new(exit::IO, e.to_string()))?;
        written.push(path);
    }
    Ok(())
}

pub fn cmd_render(
    config: &RunConfig,
    checkpoint: &Path,
    dataset: Option<PathBuf>,
    out: Option<PathBuf>,
    pose: PoseSource,
    view: View,
) -> Result<String, CliError> {
    let ds = open_dataset(config, dataset)?;
    let (state, train_config) = load_checkpoint(checkpoint)?;
    let (pose_params, stem) = match &pose {
        PoseSource::Frame(t) => {
            let p = ds
                .poses
                .get(*t)
                .ok_or_else(|| CliError::usage(format!("frame {t} out of range (dataset has {})", ds.frame_count())))?;
            (p.clone(), format!("frame{t:03}"))
        }
        PoseSource::Novel(n) => {
            let t = *ds.splits.novel_frames.get(*n).ok_or_else(|| {
                CliError::usage(format!(
                    "novel pose {n} out of range (dataset has {})",
                    ds.splits.novel_frames.len()
                ))
            })?;
            (ds.poses[t].clone(), format!("novel{n:02}"))
        }
        PoseSource::File(path) => (
            read_pose_file(path, ds.model.joint_count())?,
            path.file_stem().map_or("pose".into(), |s| s.to_string_lossy().into_owned()),
        ),
    };
    let opts = train_config.render_options(ds.spec.background);
    let set = FrameSet::new(&ds.model, std::slice::from_ref(&pose_params), &ds.shape, opts.delta_n)?;
    let cameras: Vec<(String, Camera)> = match view {
        View::Camera(k) => {
            let cam = ds
                .cameras
                .get(k)
                .ok_or_else(|| CliError::usage(format!("camera {k} out of range (dataset has {})", ds.camera_count())))?;
            vec![(format!("{stem}_cam{k:02}"), cam.clone())]
        }
        View::Orbit => {
            let n = config.render.orbit_views;
            (0..n)
                .map(|i| {
                    let az = std::f64::consts::TAU * i as f64 / n as f64;
                    ds.spec
                        .rig
                        .orbit_camera(az, ds.spec.width, ds.spec.height)
                        .map(|c| (format!("{stem}_orbit{i:02}"), c))
                })
                .collect::<Result<_, _>>()?
        }
    };
    let dir = out.unwrap_or_else(|| config.paths.output.join("renders"));
    write_effective_config(&dir, config)?;
    let mut written = Vec::new();
    for (name, cam) in &cameras {
        let image = render_frame(&state.nets, &set, 0, cam, &opts)?;
        if image.pixels.iter().flatten().any(|v| !v.is_finite()) {
            return Err(CliError::new(exit::FAILURE, format!("{name}: non-finite pixel values")));
        }
        save_render(&image, &dir, name, config.render.write_pfm, &mut written)?;
    }
    let mut text = String::new();
    for p in written {
        let _ = writeln!(text, "{}", p.display());
    }
    Ok(text)
}

fn parse_splits(split: &str) -> Result<Vec<Split>, CliError> {
    if split == "all" {
        return Ok(Split::ALL.to_vec());
    }
    split
        .parse::<Split>()
        .map(|s| vec![s])
        .map_err(|e| CliError::usage(e.to_string()))
}

pub fn format_report_table(rows: &[(String, &EvalReport)]) -> String {
    let mut t = String::new();
    let _ = writeln!(t, "{:<14} {:<11} {:>6} {:>10} {:>8}", "model", "split", "images", "psnr", "ssim");
    for (name, r) in rows {
        let _ = writeln!(
            t,
            "{:<14} {:<11} {:>6} {:>10.3} {:>8.4}",
            name,
            r.split.name(),
            r.images.len(),
            r.mean_psnr,
            r.mean_ssim
        );
    }
    t
}

fn eval_config_table(model: &str, train: Option<(&TrainingConfig, u64)>, stride: usize) -> toml::Table {
    let mut c = toml::Table::new();
    c.insert("model".into(), model.into());
    c.insert("stride".into(), (stride as i64).into());
    if let Some((tc, iteration)) = train {
        c.insert("mode".into(), tc.mode.name().into());
        c.insert("iteration".into(), (iteration as i64).into());
        c.insert("seed".into(), (tc.seed as i64).into());
        c.insert("samples_per_ray".into(), (tc.samples_per_ray as i64).into());
        c.insert("delta_n".into(), tc.delta_n.into());
    }
    c
}

/// Scores a checkpoint (or the ground truth) on the given splits.
pub fn eval_reports(
    config: &RunConfig,
    ds: &FrameDataset,
    checkpoint: Option<&Path>,
    splits: &[Split],
) -> Result<Vec<EvalReport>, CliError> {
    let stride = config.eval.stride;
    match checkpoint {
        None => {
            let model = GroundTruthModel(ds);
            splits
                .iter()
                .map(|&s| Ok(evaluate(&model, ds, s, stride, eval_config_table("ground_truth", None, stride))?))
                .collect()
        }
        Some(path) => {
            let (state, tc) = load_checkpoint(path)?;
            let nets: FieldNets = state.nets;
            let opts = tc.render_options(ds.spec.background);
            let frames = FrameSet::new(&ds.model, &ds.poses, &ds.shape, opts.delta_n)?;
            let model = NetModel {
                nets: &nets,
                frames: &frames,
                dataset: ds,
                options: opts,
            };
            let name = path.display().to_string();
            splits
                .iter()
                .map(|&s| {
                    let c = eval_config_table(&name, Some((&tc, state.iteration)), stride);
                    Ok(evaluate(&model, ds, s, stride, c)?)
                })
                .collect()
        }
    }
}

fn write_reports(path: &Path, reports: &[EvalReport]) -> Result<(), CliError> {
    #[derive(Serialize)]
    struct Reports<'a> {
        report: &'a [EvalReport],
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    let text = toml::to_string(&Reports { report: reports }).expect("reports serialize");
    std::fs::write(path, text).map_err(|e| io_error(path, e))
}

pub fn read_reports(path: &Path) -> Result<Vec<EvalReport>, CliError> {
    #[derive(Deserialize)]
    struct Reports {
        report: Vec<EvalReport>,
    }
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let r: Reports = toml::from_str(&text).map_err(|e| CliError::new(exit::DATA, format!("{}: {e}", path.display())))?;
    Ok(r.report)
}

pub fn cmd_eval(
    config: &RunConfig,
    checkpoint: Option<PathBuf>,
    ground_truth: bool,
    dataset: Option<PathBuf>,
    split: &str,
    out: Option<PathBuf>,
) -> Result<String, CliError> {
    let splits = parse_splits(split)?;
    let ds = open_dataset(config, dataset)?;
    let ckpt = if ground_truth { None } else { checkpoint.as_deref() };
    let reports = eval_reports(config, &ds, ckpt, &splits)?;
    let path = out.unwrap_or_else(|| config.paths.output.join("eval.toml"));
    write_reports(&path, &reports)?;
    let name = if ground_truth { "ground_truth" } else { "model" };
    let rows: Vec<(String, &EvalReport)> = reports.iter().map(|r| (name.to_string(), r)).collect();
    Ok(format_report_table(&rows))
}

pub fn cmd_ablate(
    config: &RunConfig,
    dataset: Option<PathBuf>,
    modes: &[AblationMode],
    force: bool,
) -> Result<String, CliError> {
    let ds = open_dataset(config, dataset)?;
    let modes = if modes.is_empty() { AblationMode::ALL.to_vec() } else { modes.to_vec() };
    let root = config.paths.output.join("ablate");
    let mut all = Vec::new();
    for mode in &modes {
        let mut c = config.clone();
        c.train.mode = *mode;
        let dir = root.join(mode.name());
        let model = dir.join(MODEL_FILE);
        let finished = !force
            && model.is_file()
            && load_checkpoint(&model).is_ok_and(|(s, tc)| s.iteration == c.train.iterations && tc == c.train);
        if !finished {
            let resume = !force && dir.join(LATEST_CHECKPOINT).is_file();
            train_run(&c, &ds, &dir, resume, true)?;
        }
        let reports = eval_reports(&c, &ds, Some(&model), &Split::ALL)?;
        write_reports(&dir.join("eval.toml"), &reports)?;
        all.extend(reports.into_iter().map(|r| (mode.name().to_string(), r)));
    }
    write_effective_config(&root, config)?;
    let rows: Vec<(String, &EvalReport)> = all.iter().map(|(n, r)| (n.clone(), r)).collect();
    let table = format_report_table(&rows);
    let path = root.join("ablation.txt");
    std::fs::write(&path, &table).map_err(|e| io_error(&path, e))?;
    Ok(table)
}

pub fn cmd_inspect_projection(
    config: &RunConfig,
    dataset: Option<PathBuf>,
    frame: usize,
    camera: usize,
    x: u32,
    y: u32,
) -> Result<String, CliError> {
    let ds = open_dataset(config, dataset)?;
    let pose = ds
        .poses
        .get(frame)
        .ok_or_else(|| CliError::usage(format!("frame {frame} out of range")))?;
    let cam = ds
        .cameras
        .get(camera)
        .ok_or_else(|| CliError::usage(format!("camera {camera} out of range")))?;
    let delta_n = config.train.delta_n;
    let set = FrameSet::new(&ds.model, std::slice::from_ref(pose), &ds.shape, delta_n)?;
    let ctx = &set.frames[0];
    let ray = cam.generate_rays(&[(x, y)])?.remove(0);
    let mut t = String::new();
    let _ = writeln!(t, "# frame {frame} camera {camera} pixel ({x}, {y}) delta_n {delta_n}");
    let _ = writeln!(t, "# index t x y z u v l face accepted");
    let Some((near, far)) = ray_bounds(&ray, &ctx.bounds) else {
        let _ = writeln!(t, "# ray misses the dilated body bounds");
        return Ok(t);
    };
    let depths = candidate_depths::<rand_chacha::ChaCha8Rng>(near, far, config.train.samples_per_ray, None);
    for (i, d) in depths.iter().enumerate() {
        let p = ray.at(*d);
        let r = closest_point(&ctx.bvh, &ctx.mesh, &p);
        let _ = writeln!(
            t,
            "{i} {d:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {} {}",
            p.x,
            p.y,
            p.z,
            r.u,
            r.v,
            r.l,
            r.face,
            u8::from(r.l < delta_n)
        );
    }
    Ok(t)
}
