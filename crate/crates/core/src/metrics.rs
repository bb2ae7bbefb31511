//! PSNR, SSIM and split-level evaluation.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{Image, ImageError};
use crate::nets::FieldNets;
use crate::render::{render_frame, FrameSet, RenderError, RenderOptions};
use crate::scene::FrameDataset;

/// PSNR reported for identical images.
pub const PSNR_IDENTICAL: f64 = f64::INFINITY;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error(transparent)]
    Shape(#[from] ImageError),
    #[error("image {width}x{height} is smaller than the {window}x{window} SSIM window")]
    TooSmall { width: u32, height: u32, window: usize },
    #[error("split {0} has no images")]
    EmptySplit(Split),
    #[error("unknown split '{0}' (expected novel_view or novel_pose)")]
    UnknownSplit(String),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

/// `10 log10(1 / mse)`, or [`PSNR_IDENTICAL`] when `mse` is zero.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        PSNR_IDENTICAL
    } else {
        -10.0 * mse.log10()
    }
}

pub fn mse(a: &Image, b: &Image) -> Result<f64, MetricsError> {
    a.same_shape(b)?;
    let sum: f64 = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .map(|(p, q)| (0..3).map(|k| (p[k] - q[k]).powi(2)).sum::<f64>())
        .sum();
    Ok(sum / (3 * a.pixels.len()) as f64)
}

/// Peak signal-to-noise ratio for images in `[0,1]`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64, MetricsError> {
    Ok(psnr_from_mse(mse(a, b)?))
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable Gaussian filter over valid window positions only.
fn filter_valid(data: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> (Vec<f64>, usize, usize) {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * data[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

/// Structural similarity: 11x11 Gaussian window with sigma 1.5,
/// `C1 = 0.01^2`, `C2 = 0.03^2`, mean over valid windows, averaged over
/// the three channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64, MetricsError> {
    a.same_shape(b)?;
    let (w, h) = (a.width as usize, a.height as usize);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(MetricsError::TooSmall {
            width: a.width,
            height: a.height,
            window: SSIM_WINDOW,
        });
    }
    let k = gaussian_kernel();
    let mut total = 0.0;
    for ch in 0..3 {
        let x: Vec<f64> = a.pixels.iter().map(|p| p[ch]).collect();
        let y: Vec<f64> = b.pixels.iter().map(|p| p[ch]).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let (mx, _, _) = filter_valid(&x, w, h, &k);
        let (my, _, _) = filter_valid(&y, w, h, &k);
        let (sxx, _, _) = filter_valid(&xx, w, h, &k);
        let (syy, _, _) = filter_valid(&yy, w, h, &k);
        let (sxy, ow, oh) = filter_valid(&xy, w, h, &k);
        let mut sum = 0.0;
        for i in 0..ow * oh {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cxy = sxy[i] - ux * uy;
            sum += ((2.0 * ux * uy + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                / ((ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2));
        }
        total += sum / (ow * oh) as f64;
    }
    Ok(total / 3.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    NovelView,
    NovelPose,
}

impl Split {
    pub const ALL: [Split; 2] = [Split::NovelView, Split::NovelPose];

    pub fn name(self) -> &'static str {
        match self {
            Split::NovelView => "novel_view",
            Split::NovelPose => "novel_pose",
        }
    }

    /// `(frame, camera)` pairs: training frames seen from held-out cameras,
    /// or novel-pose frames seen from every camera.
    pub fn pairs(self, dataset: &FrameDataset) -> Vec<(usize, usize)> {
        let s = &dataset.splits;
        match self {
            Split::NovelView => s
                .train_frames
                .iter()
                .flat_map(|&t| s.test_cameras.iter().map(move |&k| (t, k)))
                .collect(),
            Split::NovelPose => s
                .novel_frames
                .iter()
                .flat_map(|&t| (0..dataset.camera_count()).map(move |k| (t, k)))
                .collect(),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Split::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| MetricsError::UnknownSplit(s.to_string()))
    }
}

/// Anything that can produce an image of a dataset frame from a dataset camera.
pub trait FrameRenderer: Sync {
    fn render(&self, frame: usize, camera: usize) -> Result<Image, MetricsError>;
}

/// Sanity model that returns the ground truth itself.
pub struct GroundTruthModel<'a>(pub &'a FrameDataset);

impl FrameRenderer for GroundTruthModel<'_> {
    fn render(&self, frame: usize, camera: usize) -> Result<Image, MetricsError> {
        Ok(self.0.image(frame, camera).clone())
    }
}

/// The field networks rendered through the volumetric pipeline.
pub struct NetModel<'a> {
    pub nets: &'a FieldNets,
    pub frames: &'a FrameSet,
    pub dataset: &'a FrameDataset,
    pub options: RenderOptions,
}

impl FrameRenderer for NetModel<'_> {
    fn render(&self, frame: usize, camera: usize) -> Result<Image, MetricsError> {
        Ok(render_frame(
            self.nets,
            self.frames,
            frame,
            &self.dataset.cameras[camera],
            &self.options,
        )?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub frame: usize,
    pub camera: usize,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: Split,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    /// Free-form description of what was evaluated and how.
    pub config: toml::Table,
    pub images: Vec<ImageScore>,
}

impl EvalReport {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("report serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn save(&self, path: &Path) -> Result<(), MetricsError> {
        std::fs::write(path, self.to_toml()).map_err(|e| MetricsError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

/// Renders every `stride`-th pair of the split and scores it.
pub fn evaluate(
    model: &dyn FrameRenderer,
    dataset: &FrameDataset,
    split: Split,
    stride: usize,
    config: toml::Table,
) -> Result<EvalReport, MetricsError> {
    let pairs: Vec<(usize, usize)> = split.pairs(dataset).into_iter().step_by(stride.max(1)).collect();
    if pairs.is_empty() {
        return Err(MetricsError::EmptySplit(split));
    }
    let images = pairs
        .par_iter()
        .map(|&(frame, camera)| {
            let rendered = model.render(frame, camera)?;
            let gt = dataset.image(frame, camera);
            Ok(ImageScore {
                frame,
                camera,
                psnr: psnr(&rendered, gt)?,
                ssim: ssim(&rendered, gt)?,
            })
        })
        .collect::<Result<Vec<_>, MetricsError>>()?;
    let n = images.len() as f64;
    Ok(EvalReport {
        split,
        mean_psnr: images.iter().map(|s| s.psnr).sum::<f64>() / n,
        mean_ssim: images.iter().map(|s| s.ssim).sum::<f64>() / n,
        config,
        images,
    })
}
