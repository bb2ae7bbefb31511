//! Photometric optimization of the field networks over random ray batches.

mod checkpoint;

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nets::{adam_step, AdamConfig, AdamState, FieldConfig, FieldNets, FieldSwitches, NetError};
use crate::render::{
    backprop_chunk, trace_chunk, FrameSet, PipelineWiring, RenderError, RenderOptions, TaggedRay,
};
use crate::scene::{FrameDataset, SceneError};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training split is empty")]
    EmptyTrainSplit,
    #[error("batch shape mismatch: {0} rendered vs {1} ground-truth pixels")]
    ShapeMismatch(usize, usize),
    #[error("unknown ablation mode '{0}' (expected one of full, naked_surface, no_pose, no_projection, no_deform)")]
    UnknownMode(String),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Net(NetError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl From<NetError> for TrainError {
    fn from(e: NetError) -> Self {
        match e {
            NetError::Version { found, expected } => TrainError::Version { found, expected },
            other => TrainError::Net(other),
        }
    }
}

pub(crate) fn io_err(path: &Path, source: std::io::Error) -> TrainError {
    TrainError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    Full,
    NakedSurface,
    NoPose,
    NoProjection,
    NoDeform,
}

impl AblationMode {
    pub const ALL: [AblationMode; 5] = [
        AblationMode::Full,
        AblationMode::NakedSurface,
        AblationMode::NoPose,
        AblationMode::NoProjection,
        AblationMode::NoDeform,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationMode::Full => "full",
            AblationMode::NakedSurface => "naked_surface",
            AblationMode::NoPose => "no_pose",
            AblationMode::NoProjection => "no_projection",
            AblationMode::NoDeform => "no_deform",
        }
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationMode {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AblationMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| TrainError::UnknownMode(s.to_string()))
    }
}

/// Pipeline wiring for a mode. Each ablation changes exactly one stage.
pub fn apply_ablation(mode: AblationMode) -> PipelineWiring {
    let full = PipelineWiring::default();
    match mode {
        AblationMode::Full => full,
        AblationMode::NakedSurface => PipelineWiring {
            field: FieldSwitches {
                zero_distance: true,
                ..full.field
            },
            ..full
        },
        AblationMode::NoPose => PipelineWiring {
            field: FieldSwitches {
                pose: false,
                ..full.field
            },
            ..full
        },
        AblationMode::NoProjection => PipelineWiring {
            project: false,
            ..full
        },
        AblationMode::NoDeform => PipelineWiring {
            field: FieldSwitches {
                deform: false,
                ..full.field
            },
            ..full
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    /// Learning rate reached at the last iteration (exponential decay).
    pub final_learning_rate: f64,
    pub batch_size: usize,
    pub iterations: u64,
    pub delta_n: f64,
    pub samples_per_ray: usize,
    pub seed: u64,
    pub mode: AblationMode,
    /// Iterations between checkpoints; 0 disables periodic checkpoints.
    pub checkpoint_every: u64,
    /// Rays per work unit of the parallel forward/backward pass.
    pub chunk_size: usize,
    pub adam: AdamConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            final_learning_rate: 5e-5,
            batch_size: 1024,
            iterations: 30_000,
            delta_n: 0.1,
            samples_per_ray: 64,
            seed: 0,
            mode: AblationMode::Full,
            checkpoint_every: 1000,
            chunk_size: 64,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.learning_rate > 0.0 && self.final_learning_rate > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.batch_size == 0 || self.iterations == 0 || self.samples_per_ray == 0 || self.chunk_size == 0 {
            return bad("batch_size, iterations, samples_per_ray and chunk_size must be positive");
        }
        if !(self.delta_n > 0.0) {
            return bad("delta_n must be positive");
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) || !(self.adam.epsilon > 0.0) {
            return bad("adam betas must lie in [0,1) and epsilon be positive");
        }
        Ok(())
    }

    /// Learning rate used for the update at `iteration` (0-based).
    pub fn learning_rate_at(&self, iteration: u64) -> f64 {
        let progress = (iteration as f64 / self.iterations as f64).min(1.0);
        self.learning_rate * (self.final_learning_rate / self.learning_rate).powf(progress)
    }

    pub fn render_options(&self, background: [f64; 3]) -> RenderOptions {
        RenderOptions {
            background,
            samples_per_ray: self.samples_per_ray,
            delta_n: self.delta_n,
            wiring: apply_ablation(self.mode),
            chunk_size: self.chunk_size,
        }
    }
}

/// Mean over the batch of the squared RGB error, and its gradient with
/// respect to the rendered pixels.
pub fn photometric_loss(
    rendered: &[[f64; 3]],
    target: &[[f64; 3]],
) -> Result<(f64, Vec<[f64; 3]>), TrainError> {
    if rendered.len() != target.len() {
        return Err(TrainError::ShapeMismatch(rendered.len(), target.len()));
    }
    if rendered.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let n = rendered.len() as f64;
    let mut loss = 0.0;
    let grad = rendered
        .iter()
        .zip(target)
        .map(|(r, t)| {
            let mut g = [0.0; 3];
            for k in 0..3 {
                let d = r[k] - t[k];
                loss += d * d;
                g[k] = 2.0 * d / n;
            }
            g
        })
        .collect();
    Ok((loss / n, grad))
}

/// Everything that evolves during training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub nets: FieldNets,
    pub adam: AdamState,
    pub iteration: u64,
    pub rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(field: FieldConfig, config: &TrainingConfig) -> Self {
        let nets = FieldNets::new(field, config.seed);
        let sizes: Vec<usize> = nets.tensors().iter().map(|t| t.2.len()).collect();
        // Batch sampling draws from its own stream so it is independent of
        // how initialization consumed randomness.
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        Self {
            nets,
            adam: AdamState::new(&sizes),
            iteration: 0,
            rng,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    /// Iteration count after the step (1 for the first step).
    pub iteration: u64,
    pub loss: f64,
    /// PSNR of the training batch, from the per-channel mean squared error.
    pub batch_psnr: f64,
    pub samples: usize,
    pub learning_rate: f64,
}

/// A ray with its supervising pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupervisedRay {
    pub ray: TaggedRay,
    pub target: [f64; 3],
}

/// Dataset plus cached per-frame geometry.
pub struct Trainer<'a> {
    pub dataset: &'a FrameDataset,
    pub frames: FrameSet,
    pub config: TrainingConfig,
    pub field: FieldConfig,
}

impl<'a> Trainer<'a> {
    pub fn new(dataset: &'a FrameDataset, config: TrainingConfig) -> Result<Self, TrainError> {
        config.validate()?;
        if dataset.splits.train_frames.is_empty() || dataset.splits.train_cameras.is_empty() {
            return Err(TrainError::EmptyTrainSplit);
        }
        let frames = FrameSet::new(&dataset.model, &dataset.poses, &dataset.shape, config.delta_n)?;
        Ok(Self {
            dataset,
            frames,
            config,
            field: FieldConfig::for_joints(dataset.model.joint_count()),
        })
    }

    /// Replaces the default network sizes.
    pub fn with_field(mut self, field: FieldConfig) -> Self {
        self.field = field;
        self
    }

    pub fn initial_state(&self) -> TrainState {
        TrainState::new(self.field.clone(), &self.config)
    }

    pub fn render_options(&self) -> RenderOptions {
        self.config.render_options(self.dataset.spec.background)
    }

    pub fn supervised_ray(&self, frame: usize, camera: usize, x: u32, y: u32) -> SupervisedRay {
        let cam = &self.dataset.cameras[camera];
        SupervisedRay {
            ray: TaggedRay {
                frame,
                ray: cam.ray_through(x as f64 + 0.5, y as f64 + 0.5),
            },
            target: self.dataset.image(frame, camera).get(x, y),
        }
    }

    /// Uniformly random (frame, camera, pixel) rays with one stratification
    /// seed each.
    pub fn draw_batch(&self, rng: &mut ChaCha8Rng) -> (Vec<SupervisedRay>, Vec<u64>) {
        let s = &self.dataset.splits;
        let (w, h) = (self.dataset.spec.width, self.dataset.spec.height);
        let mut rays = Vec::with_capacity(self.config.batch_size);
        let mut seeds = Vec::with_capacity(self.config.batch_size);
        for _ in 0..self.config.batch_size {
            let frame = s.train_frames[rng.gen_range(0..s.train_frames.len())];
            let camera = s.train_cameras[rng.gen_range(0..s.train_cameras.len())];
            let x = rng.gen_range(0..w);
            let y = rng.gen_range(0..h);
            rays.push(self.supervised_ray(frame, camera, x, y));
            seeds.push(rng.gen());
        }
        (rays, seeds)
    }

    /// Fixed rays from held-out cameras over the training frames.
    pub fn held_out_rays(&self, count: usize, seed: u64) -> Vec<SupervisedRay> {
        let s = &self.dataset.splits;
        let cams = if s.test_cameras.is_empty() {
            &s.train_cameras
        } else {
            &s.test_cameras
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, h) = (self.dataset.spec.width, self.dataset.spec.height);
        (0..count)
            .map(|_| {
                let frame = s.train_frames[rng.gen_range(0..s.train_frames.len())];
                let camera = cams[rng.gen_range(0..cams.len())];
                self.supervised_ray(frame, camera, rng.gen_range(0..w), rng.gen_range(0..h))
            })
            .collect()
    }

    /// Mean photometric loss of `nets` on fixed rays, with midpoint sampling.
    pub fn evaluate_loss(&self, nets: &FieldNets, rays: &[SupervisedRay]) -> Result<f64, TrainError> {
        let opts = self.render_options();
        let tagged: Vec<TaggedRay> = rays.iter().map(|r| r.ray).collect();
        let pixels = crate::render::render_rays(nets, &self.frames, &tagged, &opts)?;
        let target: Vec<[f64; 3]> = rays.iter().map(|r| r.target).collect();
        Ok(photometric_loss(&pixels, &target)?.0)
    }

    /// One optimizer step on a freshly drawn batch.
    pub fn train_step(&self, state: &mut TrainState) -> Result<LossRecord, TrainError> {
        let (batch, seeds) = self.draw_batch(&mut state.rng);
        let opts = self.render_options();
        let n = batch.len() as f64;
        let chunk = self.config.chunk_size;
        let nets = &state.nets;
        let partials = batch
            .par_chunks(chunk)
            .zip(seeds.par_chunks(chunk))
            .map(|(rays, seeds)| -> Result<_, TrainError> {
                let tagged: Vec<TaggedRay> = rays.iter().map(|r| r.ray).collect();
                let trace = trace_chunk(nets, &self.frames, &tagged, &opts, Some(seeds), true)?;
                let mut sq = 0.0;
                let d: Vec<[f64; 3]> = trace
                    .pixels
                    .iter()
                    .zip(rays)
                    .map(|(p, r)| {
                        let mut g = [0.0; 3];
                        for k in 0..3 {
                            let e = p[k] - r.target[k];
                            sq += e * e;
                            g[k] = 2.0 * e / n;
                        }
                        g
                    })
                    .collect();
                let mut grads = nets.zero_grads();
                backprop_chunk(nets, &trace, &d, &mut grads)?;
                Ok((sq, trace.sample_count(), grads))
            })
            .collect::<Result<Vec<_>, _>>()?;

        // Ordered reduction: chunk order is fixed, so the sum is too.
        let mut grads = state.nets.zero_grads();
        let mut sq = 0.0;
        let mut samples = 0;
        for (s, c, g) in &partials {
            sq += s;
            samples += c;
            grads.add_assign(g);
        }
        let lr = self.config.learning_rate_at(state.iteration);
        let grad_tensors = grads.tensors();
        let mut params = state.nets.tensors_mut();
        adam_step(&self.config.adam, &mut state.adam, &mut params, &grad_tensors, lr)?;
        state.iteration += 1;
        let loss = sq / n;
        Ok(LossRecord {
            iteration: state.iteration,
            loss,
            batch_psnr: crate::metrics::psnr_from_mse(loss / 3.0),
            samples,
            learning_rate: lr,
        })
    }

    /// Runs until `state.iteration == until`, appending records to `log`
    /// and calling `on_checkpoint` at the configured cadence.
    pub fn run(
        &self,
        state: &mut TrainState,
        until: u64,
        log: &mut dyn FnMut(&LossRecord) -> Result<(), TrainError>,
        on_checkpoint: &mut dyn FnMut(&TrainState) -> Result<(), TrainError>,
    ) -> Result<(), TrainError> {
        while state.iteration < until {
            let rec = self.train_step(state)?;
            log(&rec)?;
            if self.config.checkpoint_every > 0 && state.iteration % self.config.checkpoint_every == 0 {
                on_checkpoint(state)?;
            }
        }
        Ok(())
    }
}

/// Header line of a training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub mode: AblationMode,
    pub config: TrainingConfig,
    pub parameters: usize,
}

/// Line-delimited JSON training log: a header record, then one
/// [`LossRecord`] per iteration.
pub struct TrainingLog {
    file: std::io::BufWriter<std::fs::File>,
    path: std::path::PathBuf,
}

impl TrainingLog {
    pub fn create(path: &Path, header: &LogHeader) -> Result<Self, TrainError> {
        let file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
        let mut log = Self {
            file: std::io::BufWriter::new(file),
            path: path.to_path_buf(),
        };
        log.write_line(&serde_json::json!({ "header": header }))?;
        Ok(log)
    }

    /// Reopens a log for appending, dropping records past `iteration`.
    pub fn resume(path: &Path, iteration: u64) -> Result<Self, TrainError> {
        let (header, records) = read_log(path)?;
        let mut log = Self::create(path, &header)?;
        for r in records.iter().filter(|r| r.iteration <= iteration) {
            log.append(r)?;
        }
        Ok(log)
    }

    fn write_line(&mut self, value: &serde_json::Value) -> Result<(), TrainError> {
        let line = serde_json::to_string(value).expect("log record serializes");
        writeln!(self.file, "{line}").map_err(|e| io_err(&self.path, e))
    }

    pub fn append(&mut self, record: &LossRecord) -> Result<(), TrainError> {
        self.write_line(&serde_json::to_value(record).expect("log record serializes"))
    }

    pub fn flush(&mut self) -> Result<(), TrainError> {
        self.file.flush().map_err(|e| io_err(&self.path, e))
    }
}

pub fn read_log(path: &Path) -> Result<(LogHeader, Vec<LossRecord>), TrainError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines();
    let bad = |m: String| TrainError::Checkpoint(format!("{}: {m}", path.display()));
    let first = lines.next().ok_or_else(|| bad("empty log".into()))?;
    let v: serde_json::Value = serde_json::from_str(first).map_err(|e| bad(e.to_string()))?;
    let header: LogHeader =
        serde_json::from_value(v.get("header").cloned().ok_or_else(|| bad("missing header".into()))?)
            .map_err(|e| bad(e.to_string()))?;
    let records = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| bad(e.to_string())))
        .collect::<Result<Vec<LossRecord>, _>>()?;
    Ok((header, records))
}

/// Mean of `values`; `NaN` for an empty slice.
pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

#[cfg(test)]
mod tests;
