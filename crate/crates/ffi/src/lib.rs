//! C ABI over the `ndf` crate.
//!
//! Every function returns an [`NdfStatus`]. On failure the message is kept
//! per thread and can be read with [`ndf_last_error`]. Handles are opaque
//! and must be released with the matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use ndf::imaging::Image;
use ndf::metrics::{psnr, ssim, MetricsError};
use ndf::nets::FieldNets;
use ndf::render::{composite, render_frame, FrameSet, RenderError};
use ndf::scene::{generate_dataset, load_dataset, save_dataset, FrameDataset, MotionSpec, SceneError, SceneSpec};
use ndf::train::{load_checkpoint, TrainError, TrainingConfig};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NdfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    /// Malformed or incompatible dataset, checkpoint or buffer contents.
    Data = 4,
    /// Rendering or numerical failure.
    Compute = 5,
    /// A Rust panic was caught at the boundary.
    Panic = 6,
}

/// A loaded or generated multi-view dataset.
pub struct NdfDataset {
    inner: FrameDataset,
    frames: Option<FrameSet>,
    frames_delta: f64,
}

/// Trained field networks with the settings they were trained with.
pub struct NdfModel {
    nets: FieldNets,
    config: TrainingConfig,
    iteration: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(NdfStatus, String);

impl From<SceneError> for Failure {
    fn from(e: SceneError) -> Self {
        let s = match e {
            SceneError::Io { .. } | SceneError::Exists(_) => NdfStatus::Io,
            SceneError::Invalid(_) => NdfStatus::InvalidArgument,
            _ => NdfStatus::Data,
        };
        Failure(s, e.to_string())
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        let s = match e {
            TrainError::Io { .. } => NdfStatus::Io,
            TrainError::Config(_) => NdfStatus::InvalidArgument,
            _ => NdfStatus::Data,
        };
        Failure(s, e.to_string())
    }
}

impl From<RenderError> for Failure {
    fn from(e: RenderError) -> Self {
        let s = match e {
            RenderError::LengthMismatch(_)
            | RenderError::NegativeDensity(_)
            | RenderError::NegativeSegment(_)
            | RenderError::UnknownFrame(_)
            | RenderError::PixelOutOfBounds { .. } => NdfStatus::InvalidArgument,
            RenderError::Io { .. } => NdfStatus::Io,
            _ => NdfStatus::Compute,
        };
        Failure(s, e.to_string())
    }
}

impl From<MetricsError> for Failure {
    fn from(e: MetricsError) -> Self {
        Failure(NdfStatus::InvalidArgument, e.to_string())
    }
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure(NdfStatus::InvalidArgument, message.into())
}

fn null(what: &str) -> Failure {
    Failure(NdfStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, recording any error or panic.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> NdfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            NdfStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            NdfStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn image_arg(p: *const f64, width: u32, height: u32, what: &str) -> Result<Image, Failure> {
    let n = width as usize * height as usize;
    let data = slice_arg(p, 3 * n, what)?;
    Ok(Image {
        width,
        height,
        pixels: data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
    })
}

unsafe fn write_image(image: &Image, out: *mut f64, len: usize) -> Result<(), Failure> {
    let need = 3 * image.pixels.len();
    if out.is_null() {
        return Err(null("output buffer"));
    }
    if len < need {
        return Err(invalid(format!("output buffer holds {len} values, need {need}")));
    }
    let dst = std::slice::from_raw_parts_mut(out, need);
    for (d, p) in dst.chunks_exact_mut(3).zip(&image.pixels) {
        d.copy_from_slice(p);
    }
    Ok(())
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn ndf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ndf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Generates the synthetic scene at `width` x `height` with `frames`
/// frames (0 keeps the default) and the given seed.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn ndf_dataset_generate(
    width: u32,
    height: u32,
    frames: usize,
    seed: u64,
    out: *mut *mut NdfDataset,
) -> NdfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let defaults = SceneSpec::default();
        let spec = SceneSpec {
            width,
            height,
            seed,
            motion: MotionSpec {
                frames: if frames == 0 { defaults.motion.frames } else { frames },
                ..defaults.motion.clone()
            },
            ..defaults
        };
        let ds = generate_dataset(&spec)?;
        *out = Box::into_raw(Box::new(NdfDataset {
            inner: ds,
            frames: None,
            frames_delta: 0.0,
        }));
        Ok(())
    })
}

/// Loads a dataset directory written by `ndf gen-scene`.
///
/// # Safety
/// `dir` must be a NUL-terminated string; `out` a valid handle pointer.
#[no_mangle]
pub unsafe extern "C" fn ndf_dataset_load(dir: *const c_char, out: *mut *mut NdfDataset) -> NdfStatus {
    guard(|| {
        let dir = path_arg(dir, "dir")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let ds = load_dataset(&dir)?;
        *out = Box::into_raw(Box::new(NdfDataset {
            inner: ds,
            frames: None,
            frames_delta: 0.0,
        }));
        Ok(())
    })
}

/// # Safety
/// `ds` must come from this library; `dir` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ndf_dataset_save(ds: *const NdfDataset, dir: *const c_char, force: bool) -> NdfStatus {
    guard(|| {
        let ds = ds.as_ref().ok_or_else(|| null("dataset"))?;
        let dir = path_arg(dir, "dir")?;
        save_dataset(&ds.inner, &dir, force)?;
        Ok(())
    })
}

/// Writes the frame count, camera count and image size. Any output
/// pointer may be null.
///
/// # Safety
/// `ds` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn ndf_dataset_info(
    ds: *const NdfDataset,
    frames: *mut usize,
    cameras: *mut usize,
    width: *mut u32,
    height: *mut u32,
) -> NdfStatus {
    guard(|| {
        let ds = &ds.as_ref().ok_or_else(|| null("dataset"))?.inner;
        if let Some(f) = frames.as_mut() {
            *f = ds.frame_count();
        }
        if let Some(c) = cameras.as_mut() {
            *c = ds.camera_count();
        }
        if let Some(w) = width.as_mut() {
            *w = ds.spec.width;
        }
        if let Some(h) = height.as_mut() {
            *h = ds.spec.height;
        }
        Ok(())
    })
}

/// Copies a ground-truth image as row-major interleaved RGB into `out`,
/// which must hold at least `3 * width * height` doubles.
///
/// # Safety
/// `ds` must come from this library; `out` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ndf_dataset_image(
    ds: *const NdfDataset,
    frame: usize,
    camera: usize,
    out: *mut f64,
    len: usize,
) -> NdfStatus {
    guard(|| {
        let ds = &ds.as_ref().ok_or_else(|| null("dataset"))?.inner;
        if frame >= ds.frame_count() || camera >= ds.camera_count() {
            return Err(invalid(format!("no image for frame {frame}, camera {camera}")));
        }
        write_image(ds.image(frame, camera), out, len)
    })
}

/// # Safety
/// `ds` must come from this library or be null; it must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ndf_dataset_free(ds: *mut NdfDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Loads a training checkpoint.
///
/// # Safety
/// `path` must be NUL-terminated; `out` a valid handle pointer.
#[no_mangle]
pub unsafe extern "C" fn ndf_model_load(path: *const c_char, out: *mut *mut NdfModel) -> NdfStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let (state, config) = load_checkpoint(&path)?;
        *out = Box::into_raw(Box::new(NdfModel {
            nets: state.nets,
            config,
            iteration: state.iteration,
        }));
        Ok(())
    })
}

/// Untrained networks sized for `ds`, initialized from `seed`.
///
/// # Safety
/// `ds` must come from this library; `out` a valid handle pointer.
#[no_mangle]
pub unsafe extern "C" fn ndf_model_init(ds: *const NdfDataset, seed: u64, out: *mut *mut NdfModel) -> NdfStatus {
    guard(|| {
        let ds = &ds.as_ref().ok_or_else(|| null("dataset"))?.inner;
        if out.is_null() {
            return Err(null("out"));
        }
        let config = TrainingConfig {
            seed,
            ..Default::default()
        };
        let field = ndf::nets::FieldConfig::for_joints(ds.model.joint_count());
        *out = Box::into_raw(Box::new(NdfModel {
            nets: FieldNets::new(field, seed),
            config,
            iteration: 0,
        }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn ndf_model_iteration(model: *const NdfModel, out: *mut u64) -> NdfStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        *out.as_mut().ok_or_else(|| null("out"))? = m.iteration;
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library or be null; it must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ndf_model_free(model: *mut NdfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Renders dataset frame `frame` from dataset camera `camera` into `out`
/// (row-major interleaved RGB, `3 * width * height` doubles).
///
/// # Safety
/// Handles must come from this library; `out` must point to `len` doubles.
/// The dataset handle caches per-frame geometry, so it must not be used
/// from two threads at once.
#[no_mangle]
pub unsafe extern "C" fn ndf_render(
    model: *const NdfModel,
    ds: *mut NdfDataset,
    frame: usize,
    camera: usize,
    out: *mut f64,
    len: usize,
) -> NdfStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let ds = ds.as_mut().ok_or_else(|| null("dataset"))?;
        let data = &ds.inner;
        if frame >= data.frame_count() || camera >= data.camera_count() {
            return Err(invalid(format!("no view for frame {frame}, camera {camera}")));
        }
        let opts = m.config.render_options(data.spec.background);
        if ds.frames.is_none() || ds.frames_delta != opts.delta_n {
            ds.frames = Some(FrameSet::new(&data.model, &data.poses, &data.shape, opts.delta_n)?);
            ds.frames_delta = opts.delta_n;
        }
        let set = ds.frames.as_ref().expect("just built");
        let image = render_frame(&m.nets, set, frame, &data.cameras[camera], &opts)?;
        write_image(&image, out, len)
    })
}

/// PSNR of two `width` x `height` RGB images in `[0,1]`; identical images
/// give +infinity.
///
/// # Safety
/// `a` and `b` must each point to `3 * width * height` doubles.
#[no_mangle]
pub unsafe extern "C" fn ndf_psnr(a: *const f64, b: *const f64, width: u32, height: u32, out: *mut f64) -> NdfStatus {
    guard(|| {
        let a = image_arg(a, width, height, "a")?;
        let b = image_arg(b, width, height, "b")?;
        *out.as_mut().ok_or_else(|| null("out"))? = psnr(&a, &b)?;
        Ok(())
    })
}

/// SSIM with an 11x11 Gaussian window (sigma 1.5), averaged over channels.
///
/// # Safety
/// `a` and `b` must each point to `3 * width * height` doubles.
#[no_mangle]
pub unsafe extern "C" fn ndf_ssim(a: *const f64, b: *const f64, width: u32, height: u32, out: *mut f64) -> NdfStatus {
    guard(|| {
        let a = image_arg(a, width, height, "a")?;
        let b = image_arg(b, width, height, "b")?;
        *out.as_mut().ok_or_else(|| null("out"))? = ssim(&a, &b)?;
        Ok(())
    })
}

/// Composites `n` samples front to back over `background` (3 doubles).
/// `colors` holds `3 * n` doubles. Writes the pixel to `out_rgb` and the
/// accumulated opacity to `out_opacity` (may be null).
///
/// # Safety
/// Pointers must reference buffers of the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn ndf_composite(
    sigmas: *const f64,
    colors: *const f64,
    deltas: *const f64,
    n: usize,
    background: *const f64,
    out_rgb: *mut f64,
    out_opacity: *mut f64,
) -> NdfStatus {
    guard(|| {
        let s = slice_arg(sigmas, n, "sigmas")?;
        let c: Vec<[f64; 3]> = slice_arg(colors, 3 * n, "colors")?
            .chunks_exact(3)
            .map(|c| [c[0], c[1], c[2]])
            .collect();
        let d = slice_arg(deltas, n, "deltas")?;
        let bg = slice_arg(background, 3, "background")?;
        let comp = composite(s, &c, d)?;
        let px = comp.over([bg[0], bg[1], bg[2]]);
        if out_rgb.is_null() {
            return Err(null("out_rgb"));
        }
        std::slice::from_raw_parts_mut(out_rgb, 3).copy_from_slice(&px);
        if let Some(o) = out_opacity.as_mut() {
            *o = comp.opacity;
        }
        Ok(())
    })
}
