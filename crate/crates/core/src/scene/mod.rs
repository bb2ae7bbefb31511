//! Ground-truth data: the procedurally textured toy body, ray traced from a
//! ring of cameras over a scripted motion.
//!
//! Dataset directory layout (version 1):
//!
//! ```text
//! manifest.json        spec echo, splits, per-frame poses and image paths
//! cameras.txt          camera file
//! body.ndfb            skinned body model
//! images/fTTT_cKK.pfm  float RGB image of frame TTT from camera KK
//! ```

mod motion;
mod texture;

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::body::{
    generate_toy_body, load_body, pose_body, save_body, AtlasChart, BodyError, PoseParams, PosedMesh,
    ShapeParams, SkinnedBodyModel, ToyBodySpec,
};
use crate::imaging::{Image, ImageError};
use crate::projection::{ProjectionError, TriangleBvh};
use crate::render::{load_cameras, save_cameras, Camera, RenderError, RAY_EPSILON};

pub use motion::{motion_script, pose_distance, MotionSpec, RigSpec};
pub use texture::{bend_angle, procedural_texture, wrinkle_amplitude, TextureSpec};

pub const DATASET_VERSION: u32 = 1;
const DATASET_FORMAT: &str = "ndf-dataset";

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("invalid scene: {0}")]
    Invalid(String),
    #[error("{0} already exists and is not empty; use --force to overwrite")]
    Exists(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Body(#[from] BodyError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Projection(#[from] ProjectionError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> SceneError {
    SceneError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub body: ToyBodySpec,
    pub rig: RigSpec,
    pub motion: MotionSpec,
    pub texture: TextureSpec,
    pub width: u32,
    pub height: u32,
    pub background: [f64; 3],
    /// Shading floor of the headlight term.
    pub ambient: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            body: ToyBodySpec::default(),
            rig: RigSpec::default(),
            motion: MotionSpec::default(),
            texture: TextureSpec::default(),
            width: 128,
            height: 128,
            background: [0.0; 3],
            ambient: 0.3,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SceneError> {
        self.body.validate()?;
        self.rig.validate().map_err(SceneError::Invalid)?;
        self.motion.validate().map_err(SceneError::Invalid)?;
        self.texture.validate().map_err(SceneError::Invalid)?;
        if self.width == 0 || self.height == 0 {
            return Err(SceneError::Invalid("image resolution must be non-zero".into()));
        }
        if self.background.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(SceneError::Invalid("background must lie in [0,1]".into()));
        }
        if !(0.0..=1.0).contains(&self.ambient) {
            return Err(SceneError::Invalid("ambient must lie in [0,1]".into()));
        }
        Ok(())
    }

    pub fn cameras(&self) -> Result<Vec<Camera>, SceneError> {
        Ok(self.rig.cameras(self.width, self.height)?)
    }

    pub fn poses(&self) -> Vec<PoseParams> {
        motion_script(&self.body, &self.motion, self.seed)
    }
}

/// Shades hits on a posed toy body.
pub struct GroundTruthRenderer<'a> {
    spec: &'a SceneSpec,
    atlas: Vec<AtlasChart>,
}

impl<'a> GroundTruthRenderer<'a> {
    pub fn new(spec: &'a SceneSpec) -> Self {
        Self {
            spec,
            atlas: spec.body.atlas(),
        }
    }

    pub fn chart_of(&self, u: f64, v: f64) -> usize {
        self.atlas.iter().position(|c| c.contains(u, v)).unwrap_or(0)
    }

    pub fn albedo(&self, u: f64, v: f64, pose: &PoseParams) -> [f64; 3] {
        let chart = self.chart_of(u, v);
        procedural_texture(u, v, chart, &self.atlas[chart], pose, &self.spec.texture)
    }

    /// Headlight diffuse factor for a face seen along `dir`.
    pub fn diffuse(&self, mesh: &PosedMesh, face: usize, dir: &crate::geometry::Vec3) -> f64 {
        let [a, b, c] = mesh.triangle(face);
        let n = (b - a).cross(&(c - a));
        let cos = if n.norm() > 0.0 {
            n.normalize().dot(dir).abs()
        } else {
            0.0
        };
        self.spec.ambient + (1.0 - self.spec.ambient) * cos
    }

    pub fn render(
        &self,
        mesh: &PosedMesh,
        bvh: &TriangleBvh,
        pose: &PoseParams,
        camera: &Camera,
    ) -> Image {
        let mut img = Image::filled(camera.width, camera.height, self.spec.background);
        let width = camera.width as usize;
        img.pixels
            .par_chunks_mut(width)
            .enumerate()
            .for_each(|(y, row)| {
                for (x, px) in row.iter_mut().enumerate() {
                    let ray = camera.ray_through(x as f64 + 0.5, y as f64 + 0.5);
                    if let Some(hit) =
                        bvh.intersect_ray(mesh, &ray.origin, &ray.direction, RAY_EPSILON, f64::INFINITY)
                    {
                        let [u, v] = mesh.texel(hit.face, hit.bary);
                        let albedo = self.albedo(u, v, pose);
                        let shade = self.diffuse(mesh, hit.face, &ray.direction);
                        *px = albedo.map(|c| (c * shade).clamp(0.0, 1.0));
                    }
                }
            });
        img
    }
}

/// Ray traces one frame of the scene.
pub fn raytrace_frame(
    spec: &SceneSpec,
    model: &SkinnedBodyModel,
    pose: &PoseParams,
    camera: &Camera,
) -> Result<Image, SceneError> {
    let mesh = pose_body(model, pose, &ShapeParams::default())?;
    let bvh = TriangleBvh::build(&mesh)?;
    Ok(GroundTruthRenderer::new(spec).render(&mesh, &bvh, pose, camera))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train_cameras: Vec<usize>,
    pub test_cameras: Vec<usize>,
    pub train_frames: Vec<usize>,
    pub novel_frames: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameDataset {
    pub spec: SceneSpec,
    pub model: SkinnedBodyModel,
    pub shape: ShapeParams,
    pub poses: Vec<PoseParams>,
    pub cameras: Vec<Camera>,
    /// Frame-major: image of frame `t`, camera `k` at `t * K + k`.
    pub images: Vec<Image>,
    pub splits: Splits,
}

impl FrameDataset {
    pub fn frame_count(&self) -> usize {
        self.poses.len()
    }

    pub fn camera_count(&self) -> usize {
        self.cameras.len()
    }

    pub fn image(&self, frame: usize, camera: usize) -> &Image {
        &self.images[frame * self.camera_count() + camera]
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let (t, k) = (self.frame_count(), self.camera_count());
        if t == 0 || k == 0 {
            return Err(SceneError::Invalid("dataset has no frames or cameras".into()));
        }
        if self.images.len() != t * k {
            return Err(SceneError::Invalid(format!(
                "expected {} images, found {}",
                t * k,
                self.images.len()
            )));
        }
        let (w, h) = (self.images[0].width, self.images[0].height);
        for (i, img) in self.images.iter().enumerate() {
            if (img.width, img.height) != (w, h) || img.pixels.len() != (w * h) as usize {
                return Err(SceneError::Invalid(format!("image {i} has a different resolution")));
            }
            if img.pixels.iter().flatten().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(SceneError::Invalid(format!("image {i} has values outside [0,1]")));
            }
        }
        for c in &self.cameras {
            c.validate()?;
            if (c.width, c.height) != (w, h) {
                return Err(SceneError::Invalid("camera resolution differs from images".into()));
            }
        }
        let s = &self.splits;
        let in_range = |v: &[usize], n: usize| v.iter().all(|&i| i < n);
        if !in_range(&s.train_cameras, k)
            || !in_range(&s.test_cameras, k)
            || !in_range(&s.train_frames, t)
            || !in_range(&s.novel_frames, t)
        {
            return Err(SceneError::Invalid("split index out of range".into()));
        }
        if s.train_frames.is_empty() || s.train_cameras.is_empty() {
            return Err(SceneError::Invalid("empty training split".into()));
        }
        Ok(())
    }
}

/// Renders every frame from every camera and assigns the splits.
pub fn generate_dataset(spec: &SceneSpec) -> Result<FrameDataset, SceneError> {
    spec.validate()?;
    let model = generate_toy_body(&spec.body)?;
    let shape = ShapeParams::default();
    let poses = spec.poses();
    let cameras = spec.cameras()?;
    let renderer = GroundTruthRenderer::new(spec);
    let frames: Vec<Vec<Image>> = poses
        .par_iter()
        .map(|pose| -> Result<Vec<Image>, SceneError> {
            let mesh = pose_body(&model, pose, &shape)?;
            let bvh = TriangleBvh::build(&mesh)?;
            Ok(cameras
                .iter()
                .map(|cam| {
                    let mut img = renderer.render(&mesh, &bvh, pose, cam);
                    // Match the stored precision so saved and in-memory data agree.
                    for p in img.pixels.iter_mut() {
                        *p = p.map(|c| c as f32 as f64);
                    }
                    img
                })
                .collect())
        })
        .collect::<Result<_, _>>()?;
    let train_cameras = spec.rig.train_indices();
    let test_cameras = (0..cameras.len()).filter(|k| !train_cameras.contains(k)).collect();
    let train = spec.motion.train_frame_count();
    let ds = FrameDataset {
        spec: spec.clone(),
        model,
        shape,
        poses: poses.clone(),
        cameras,
        images: frames.into_iter().flatten().collect(),
        splits: Splits {
            train_cameras,
            test_cameras,
            train_frames: (0..train).collect(),
            novel_frames: (train..poses.len()).collect(),
        },
    };
    ds.validate()?;
    Ok(ds)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    version: u32,
    spec: SceneSpec,
    shape: Vec<f64>,
    cameras: String,
    body: String,
    splits: Splits,
    frames: Vec<ManifestFrame>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFrame {
    index: usize,
    pose: PoseParams,
    images: Vec<String>,
}

fn image_name(frame: usize, camera: usize) -> String {
    format!("images/f{frame:03}_c{camera:02}.pfm")
}

/// True when `dir` exists and has at least one entry.
pub fn dir_is_populated(dir: &Path) -> Result<bool, SceneError> {
    match std::fs::read_dir(dir) {
        Ok(mut it) => Ok(it.next().is_some()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(false),
        Err(e) => Err(io_err(dir, e)),
    }
}

pub fn save_dataset(ds: &FrameDataset, dir: &Path, force: bool) -> Result<(), SceneError> {
    if !force && dir_is_populated(dir)? {
        return Err(SceneError::Exists(dir.display().to_string()));
    }
    let images_dir = dir.join("images");
    std::fs::create_dir_all(&images_dir).map_err(|e| io_err(&images_dir, e))?;
    let k = ds.camera_count();
    let manifest = Manifest {
        format: DATASET_FORMAT.into(),
        version: DATASET_VERSION,
        spec: ds.spec.clone(),
        shape: ds.shape.coefficients.clone(),
        cameras: "cameras.txt".into(),
        body: "body.ndfb".into(),
        splits: ds.splits.clone(),
        frames: ds
            .poses
            .iter()
            .enumerate()
            .map(|(t, pose)| ManifestFrame {
                index: t,
                pose: pose.clone(),
                images: (0..k).map(|c| image_name(t, c)).collect(),
            })
            .collect(),
    };
    save_cameras(&dir.join("cameras.txt"), &ds.cameras)?;
    save_body(&ds.model, dir.join("body.ndfb"))?;
    for t in 0..ds.frame_count() {
        for c in 0..k {
            ds.image(t, c).save_pfm(&dir.join(image_name(t, c)))?;
        }
    }
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))
}

pub fn load_dataset(dir: &Path) -> Result<FrameDataset, SceneError> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| SceneError::Manifest(format!("{}: {e}", path.display())))?;
    if manifest.format != DATASET_FORMAT {
        return Err(SceneError::Manifest(format!("unknown format '{}'", manifest.format)));
    }
    if manifest.version != DATASET_VERSION {
        return Err(SceneError::Manifest(format!(
            "dataset version {}, expected {DATASET_VERSION}",
            manifest.version
        )));
    }
    let cameras = load_cameras(&dir.join(&manifest.cameras))?;
    let model = load_body(&dir.join(&manifest.body))?;
    let paths: Vec<PathBuf> = manifest
        .frames
        .iter()
        .flat_map(|f| f.images.iter().map(|i| dir.join(i)))
        .collect();
    let images = paths
        .par_iter()
        .map(|p| Image::load_pfm(p))
        .collect::<Result<Vec<_>, _>>()?;
    let ds = FrameDataset {
        spec: manifest.spec,
        model,
        shape: ShapeParams {
            coefficients: manifest.shape,
        },
        poses: manifest.frames.into_iter().map(|f| f.pose).collect(),
        cameras,
        images,
        splits: manifest.splits,
    };
    ds.validate()?;
    Ok(ds)
}
