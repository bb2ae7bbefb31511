//! Camera rays, geometry-guided sampling and volumetric compositing through
//! the field networks.

mod camera;
mod composite;
mod sampling;

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::body::{pose_body, BodyError, PoseParams, PosedMesh, ShapeParams, SkinnedBodyModel};
use crate::geometry::{Aabb, Vec3};
use crate::imaging::Image;
use crate::nets::{FieldGrads, FieldInputs, FieldNets, FieldSwitches, FieldTape, NetError};
use crate::projection::{ProjectionError, TriangleBvh};

pub use camera::{load_cameras, read_cameras, save_cameras, write_cameras, Camera, CAMERA_FILE_VERSION};
pub use composite::{composite, composite_backward, Composite};
pub use sampling::{candidate_depths, ray_bounds, sample_ray, Sample, SampleBatch};

/// Smallest depth a camera ray is evaluated at.
pub const RAY_EPSILON: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("pixel ({x}, {y}) outside {width}x{height} image")]
    PixelOutOfBounds { x: u32, y: u32, width: u32, height: u32 },
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("negative density {0}")]
    NegativeDensity(f64),
    #[error("negative segment length {0}")]
    NegativeSegment(f64),
    #[error("camera file: {0}")]
    Format(String),
    #[error("frame {0} is not loaded")]
    UnknownFrame(usize),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Projection(#[from] ProjectionError),
    #[error(transparent)]
    Body(#[from] BodyError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl RenderError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub near: f64,
    pub far: f64,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }

    pub fn with_bounds(&self, near: f64, far: f64) -> Ray {
        Ray { near, far, ..*self }
    }
}

/// Which coordinates feed the field and which field stages run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PipelineWiring {
    /// Feed `(u*, v*, l*)`; otherwise the raw observation-space position.
    pub project: bool,
    pub field: FieldSwitches,
}

impl Default for PipelineWiring {
    fn default() -> Self {
        Self {
            project: true,
            field: FieldSwitches::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    pub background: [f64; 3],
    pub samples_per_ray: usize,
    pub delta_n: f64,
    pub wiring: PipelineWiring,
    /// Rays per work unit. Results do not depend on it.
    pub chunk_size: usize,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            background: [0.0; 3],
            samples_per_ray: 64,
            delta_n: 0.1,
            wiring: PipelineWiring::default(),
            chunk_size: 64,
        }
    }
}

/// A posed body ready for ray queries.
#[derive(Debug, Clone)]
pub struct FrameContext {
    pub pose: PoseParams,
    pub mesh: PosedMesh,
    pub bvh: TriangleBvh,
    /// Mesh bounds dilated by the acceptance threshold.
    pub bounds: Aabb,
}

impl FrameContext {
    pub fn new(
        model: &SkinnedBodyModel,
        pose: &PoseParams,
        shape: &ShapeParams,
        delta_n: f64,
    ) -> Result<Self, RenderError> {
        let mesh = pose_body(model, pose, shape)?;
        let bvh = TriangleBvh::build(&mesh)?;
        let bounds = mesh.bounds().dilated(delta_n);
        Ok(Self {
            pose: pose.clone(),
            mesh,
            bvh,
            bounds,
        })
    }
}

/// Posed frames plus their articulation vectors, one row per frame.
#[derive(Debug, Clone)]
pub struct FrameSet {
    pub frames: Vec<FrameContext>,
    pub poses: Array2<f64>,
}

impl FrameSet {
    pub fn new(
        model: &SkinnedBodyModel,
        poses: &[PoseParams],
        shape: &ShapeParams,
        delta_n: f64,
    ) -> Result<Self, RenderError> {
        let frames = poses
            .par_iter()
            .map(|p| FrameContext::new(model, p, shape, delta_n))
            .collect::<Result<Vec<_>, _>>()?;
        let dim = 3 * model.joint_count().saturating_sub(1);
        let mut matrix = Array2::zeros((poses.len(), dim));
        for (i, p) in poses.iter().enumerate() {
            let a = p.articulation();
            if a.len() != dim {
                return Err(RenderError::LengthMismatch(format!(
                    "pose {i} has {} articulation values, model needs {dim}",
                    a.len()
                )));
            }
            matrix.row_mut(i).assign(&Array1::from(a));
        }
        Ok(Self {
            frames,
            poses: matrix,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// A ray tagged with the frame it observes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaggedRay {
    pub frame: usize,
    pub ray: Ray,
}

/// Everything one chunk of rays produced, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ChunkTrace {
    pub batches: Vec<SampleBatch>,
    pub pixels: Vec<[f64; 3]>,
    pub sigma: Array1<f64>,
    pub rgb: Array2<f64>,
    tape: FieldTape,
    background: [f64; 3],
}

impl ChunkTrace {
    pub fn sample_count(&self) -> usize {
        self.sigma.len()
    }
}

/// Samples, evaluates and composites a chunk of rays. `jitter_seeds` gives
/// one stratification seed per ray; without it stratum midpoints are used.
pub fn trace_chunk(
    nets: &FieldNets,
    set: &FrameSet,
    rays: &[TaggedRay],
    opts: &RenderOptions,
    jitter_seeds: Option<&[u64]>,
    record: bool,
) -> Result<ChunkTrace, RenderError> {
    if let Some(seeds) = jitter_seeds {
        if seeds.len() != rays.len() {
            return Err(RenderError::LengthMismatch(format!(
                "{} jitter seeds for {} rays",
                seeds.len(),
                rays.len()
            )));
        }
    }
    let mut batches = Vec::with_capacity(rays.len());
    for (i, tr) in rays.iter().enumerate() {
        let ctx = set.frames.get(tr.frame).ok_or(RenderError::UnknownFrame(tr.frame))?;
        let batch = match ray_bounds(&tr.ray, &ctx.bounds) {
            None => SampleBatch::default(),
            Some((near, far)) => {
                let ray = tr.ray.with_bounds(near, far);
                let mut rng = jitter_seeds.map(|s| ChaCha8Rng::seed_from_u64(s[i]));
                sample_ray(
                    &ray,
                    &ctx.bvh,
                    &ctx.mesh,
                    opts.samples_per_ray,
                    opts.delta_n,
                    rng.as_mut(),
                )?
            }
        };
        batches.push(batch);
    }

    let n: usize = batches.iter().map(SampleBatch::len).sum();
    let mut coords = Array2::zeros((n, 3));
    let mut dirs = Array2::zeros((n, 3));
    let mut sample_pose = Vec::with_capacity(n);
    let mut row = 0;
    for (tr, batch) in rays.iter().zip(&batches) {
        for s in &batch.samples {
            let c = if opts.wiring.project {
                s.projection.coords()
            } else {
                [s.position.x, s.position.y, s.position.z]
            };
            for k in 0..3 {
                coords[[row, k]] = c[k];
                dirs[[row, k]] = tr.ray.direction[k];
            }
            sample_pose.push(tr.frame);
            row += 1;
        }
    }

    let mut tape = FieldTape::new();
    let (sigma, rgb) = if n == 0 {
        (Array1::zeros(0), Array2::zeros((0, 3)))
    } else {
        let inputs = FieldInputs {
            coords,
            dirs,
            sample_pose,
            poses: set.poses.clone(),
        };
        let out = nets.forward(&inputs, opts.wiring.field, record.then_some(&mut tape))?;
        let mut row = 0;
        for batch in batches.iter_mut() {
            for s in batch.samples.iter_mut() {
                s.deformed = [out.deformed[[row, 0]], out.deformed[[row, 1]], out.deformed[[row, 2]]];
                row += 1;
            }
        }
        (out.sigma, out.rgb)
    };

    let mut pixels = Vec::with_capacity(rays.len());
    let mut row = 0;
    for batch in &batches {
        let m = batch.len();
        let s = sigma.slice(ndarray::s![row..row + m]).to_vec();
        let c: Vec<[f64; 3]> = (row..row + m)
            .map(|i| [rgb[[i, 0]], rgb[[i, 1]], rgb[[i, 2]]])
            .collect();
        pixels.push(composite(&s, &c, &batch.deltas())?.over(opts.background));
        row += m;
    }
    Ok(ChunkTrace {
        batches,
        pixels,
        sigma,
        rgb,
        tape,
        background: opts.background,
    })
}

/// Backpropagates per-pixel gradients through compositing and the field.
pub fn backprop_chunk(
    nets: &FieldNets,
    trace: &ChunkTrace,
    d_pixels: &[[f64; 3]],
    grads: &mut FieldGrads,
) -> Result<(), RenderError> {
    if d_pixels.len() != trace.pixels.len() {
        return Err(RenderError::LengthMismatch(format!(
            "{} pixel gradients for {} rays",
            d_pixels.len(),
            trace.pixels.len()
        )));
    }
    let n = trace.sample_count();
    if n == 0 {
        return Ok(());
    }
    let mut d_sigma = Array1::zeros(n);
    let mut d_rgb = Array2::zeros((n, 3));
    let mut row = 0;
    for (batch, dp) in trace.batches.iter().zip(d_pixels) {
        let m = batch.len();
        if m > 0 {
            let s = trace.sigma.slice(ndarray::s![row..row + m]).to_vec();
            let c: Vec<[f64; 3]> = (row..row + m)
                .map(|i| [trace.rgb[[i, 0]], trace.rgb[[i, 1]], trace.rgb[[i, 2]]])
                .collect();
            let (gs, gc) = composite_backward(&s, &c, &batch.deltas(), trace.background, *dp)?;
            for j in 0..m {
                d_sigma[row + j] = gs[j];
                for k in 0..3 {
                    d_rgb[[row + j, k]] = gc[j][k];
                }
            }
        }
        row += m;
    }
    nets.backward(&trace.tape, &d_sigma, &d_rgb, grads)?;
    Ok(())
}

/// Renders rays in fixed-size chunks in parallel. The output does not
/// depend on the number of worker threads.
pub fn render_rays(
    nets: &FieldNets,
    set: &FrameSet,
    rays: &[TaggedRay],
    opts: &RenderOptions,
) -> Result<Vec<[f64; 3]>, RenderError> {
    let chunks = rays
        .par_chunks(opts.chunk_size.max(1))
        .map(|chunk| trace_chunk(nets, set, chunk, opts, None, false).map(|t| t.pixels))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

/// Renders every pixel of `camera` for a loaded frame.
pub fn render_frame(
    nets: &FieldNets,
    set: &FrameSet,
    frame: usize,
    camera: &Camera,
    opts: &RenderOptions,
) -> Result<Image, RenderError> {
    let pixels: Vec<(u32, u32)> = (0..camera.height)
        .flat_map(|y| (0..camera.width).map(move |x| (x, y)))
        .collect();
    let rays: Vec<TaggedRay> = camera
        .generate_rays(&pixels)?
        .into_iter()
        .map(|ray| TaggedRay { frame, ray })
        .collect();
    Ok(Image {
        width: camera.width,
        height: camera.height,
        pixels: render_rays(nets, set, &rays, opts)?,
    })
}

/// Full pipeline for one pose: pose the body, build its BVH and render.
pub fn render_image(
    model: &SkinnedBodyModel,
    nets: &FieldNets,
    pose: &PoseParams,
    shape: &ShapeParams,
    camera: &Camera,
    opts: &RenderOptions,
) -> Result<Image, RenderError> {
    let set = FrameSet::new(model, std::slice::from_ref(pose), shape, opts.delta_n)?;
    render_frame(nets, &set, 0, camera, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::{generate_toy_body, ToyBodySpec};
    use crate::nets::{FieldConfig, PositionalEncoder};
    use std::f64::consts::LN_2;

    fn small_config(joints: usize) -> FieldConfig {
        FieldConfig {
            pose_input_dim: 3 * (joints - 1),
            pose_hidden: vec![8],
            pose_feature_dim: 4,
            deform_hidden: vec![8],
            density_hidden: vec![8, 8],
            density_skip_after: Some(0),
            geometry_feature_dim: 4,
            color_hidden: vec![8],
            coord_encoder: PositionalEncoder::new(2, true),
            dir_encoder: PositionalEncoder::new(1, true),
            deform_scale: [0.05, 0.05, 0.02],
        }
    }

    fn setup() -> (SkinnedBodyModel, Camera) {
        let model = generate_toy_body(&ToyBodySpec::default()).unwrap();
        let cam = Camera::look_at(
            Vec3::new(0.0, -3.0, 1.0),
            Vec3::new(0.0, 0.0, 0.9),
            Vec3::z(),
            [40.0, 40.0, 12.0, 12.0],
            24,
            24,
        )
        .unwrap();
        (model, cam)
    }

    fn bent_pose(joints: usize) -> PoseParams {
        let mut pose = PoseParams::zero(joints);
        pose.joint_rotations[4] = [0.6, 0.0, 0.0];
        pose.joint_rotations[7] = [0.0, 0.3, 0.2];
        pose
    }

    #[test]
    fn zero_output_nets_composite_constant_samples() {
        let (model, cam) = setup();
        let mut nets = FieldNets::new(small_config(model.joint_count()), 0);
        nets.zero_output_layers();
        let opts = RenderOptions {
            background: [0.1, 0.2, 0.3],
            ..Default::default()
        };
        let pose = bent_pose(model.joint_count());
        let set = FrameSet::new(&model, std::slice::from_ref(&pose), &ShapeParams::default(), opts.delta_n).unwrap();
        let img = render_frame(&nets, &set, 0, &cam, &opts).unwrap();
        let mut foreground = 0;
        for y in 0..cam.height {
            for x in 0..cam.width {
                let ray = cam.generate_rays(&[(x, y)]).unwrap()[0];
                let trace = trace_chunk(&nets, &set, &[TaggedRay { frame: 0, ray }], &opts, None, false).unwrap();
                let deltas = trace.batches[0].deltas();
                let n = deltas.len();
                let expected = composite(&vec![LN_2; n], &vec![[0.5; 3]; n], &deltas)
                    .unwrap()
                    .over(opts.background);
                assert_eq!(img.get(x, y), expected);
                if n > 0 {
                    foreground += 1;
                } else {
                    assert_eq!(img.get(x, y), opts.background);
                }
            }
        }
        assert!(foreground > 20);
        let again = render_frame(&nets, &set, 0, &cam, &opts).unwrap();
        assert_eq!(img, again);
    }

    #[test]
    fn camera_looking_away_sees_background() {
        let (model, _) = setup();
        let cam = Camera::look_at(
            Vec3::new(0.0, -3.0, 1.0),
            Vec3::new(0.0, -6.0, 1.0),
            Vec3::z(),
            [40.0, 40.0, 8.0, 8.0],
            16,
            16,
        )
        .unwrap();
        let nets = FieldNets::new(small_config(model.joint_count()), 0);
        let opts = RenderOptions {
            background: [0.25, 0.5, 0.75],
            ..Default::default()
        };
        let img = render_image(&model, &nets, &PoseParams::zero(11), &ShapeParams::default(), &cam, &opts).unwrap();
        assert!(img.pixels.iter().all(|p| *p == opts.background));
    }

    #[test]
    fn chunk_size_and_thread_count_do_not_change_images() {
        let (model, cam) = setup();
        let nets = FieldNets::new(small_config(model.joint_count()), 4);
        let pose = bent_pose(model.joint_count());
        let base = RenderOptions::default();
        let a = render_image(&model, &nets, &pose, &ShapeParams::default(), &cam, &base).unwrap();
        let b = render_image(
            &model,
            &nets,
            &pose,
            &ShapeParams::default(),
            &cam,
            &RenderOptions {
                chunk_size: 7,
                ..base
            },
        )
        .unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let c = pool
            .install(|| render_image(&model, &nets, &pose, &ShapeParams::default(), &cam, &base))
            .unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn samples_are_sorted_and_deltas_consistent() {
        let (model, cam) = setup();
        let nets = FieldNets::new(small_config(model.joint_count()), 4);
        let set = FrameSet::new(&model, &[bent_pose(11)], &ShapeParams::default(), 0.1).unwrap();
        let rays: Vec<TaggedRay> = cam
            .generate_rays(&[(12, 12), (11, 6), (12, 20)])
            .unwrap()
            .into_iter()
            .map(|ray| TaggedRay { frame: 0, ray })
            .collect();
        let seeds = [1, 2, 3];
        let t = trace_chunk(&nets, &set, &rays, &RenderOptions::default(), Some(&seeds), false).unwrap();
        assert!(t.batches.iter().any(|b| !b.is_empty()));
        for b in &t.batches {
            for w in b.samples.windows(2) {
                assert!(w[1].t > w[0].t);
                assert!((w[1].delta - (w[1].position - w[0].position).norm()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn render_to_loss_gradient_matches_finite_differences() {
        let (model, cam) = setup();
        let joints = model.joint_count();
        for seed in 0..5u64 {
            let mut nets = FieldNets::new(small_config(joints), seed);
            // Non-zero deformation so every stage carries gradient.
            for (i, v) in nets.deform_net.layers.last_mut().unwrap().weight.iter_mut().enumerate() {
                *v = ((i as f64 + seed as f64) * 0.37).sin();
            }
            let poses = [bent_pose(joints), PoseParams::zero(joints)];
            let set = FrameSet::new(&model, &poses, &ShapeParams::default(), 0.1).unwrap();
            let rays: Vec<TaggedRay> = [(12u32, 10u32), (11, 16), (13, 7), (0, 0)]
                .iter()
                .enumerate()
                .map(|(i, &p)| TaggedRay {
                    frame: i % 2,
                    ray: cam.generate_rays(&[p]).unwrap()[0],
                })
                .collect();
            let target = [[0.9, 0.1, 0.4], [0.2, 0.3, 0.8], [0.5, 0.5, 0.5], [0.0, 0.0, 0.0]];
            let opts = RenderOptions {
                background: [0.3, 0.6, 0.9],
                ..Default::default()
            };
            let loss = |n: &FieldNets| {
                let t = trace_chunk(n, &set, &rays, &opts, None, false).unwrap();
                t.pixels
                    .iter()
                    .zip(&target)
                    .map(|(p, g)| (0..3).map(|k| (p[k] - g[k]).powi(2)).sum::<f64>())
                    .sum::<f64>()
            };
            let trace = trace_chunk(&nets, &set, &rays, &opts, None, true).unwrap();
            assert!(trace.sample_count() > 0);
            let d: Vec<[f64; 3]> = trace
                .pixels
                .iter()
                .zip(&target)
                .map(|(p, g)| [2.0 * (p[0] - g[0]), 2.0 * (p[1] - g[1]), 2.0 * (p[2] - g[2])])
                .collect();
            let mut grads = nets.zero_grads();
            backprop_chunk(&nets, &trace, &d, &mut grads).unwrap();
            let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();
            let h = 1e-6;
            for (ti, a) in analytic.iter().enumerate() {
                for idx in [0, a.len() / 3, a.len() - 1] {
                    let mut p = nets.clone();
                    p.tensors_mut()[ti][idx] += h;
                    let mut q = nets.clone();
                    q.tensors_mut()[ti][idx] -= h;
                    let fd = (loss(&p) - loss(&q)) / (2.0 * h);
                    let g = a[idx];
                    assert!(
                        (fd - g).abs() <= 1e-6f64.max(1e-4 * fd.abs().max(g.abs())),
                        "seed {seed} tensor {ti}[{idx}]: fd {fd} analytic {g}"
                    );
                }
            }
        }
    }
}
