use std::fmt::Write as _;
use std::path::Path;

use crate::geometry::{Mat3, Vec3};

use super::{Ray, RenderError, RAY_EPSILON};

pub const CAMERA_FILE_VERSION: u32 = 1;
const CAMERA_FILE_MAGIC: &str = "NDFCAM";

/// Pinhole camera with world-to-camera extrinsics `x_c = R x_w + t`.
/// The camera looks down its +z axis, +y points down the image.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: Mat3,
    pub translation: Vec3,
    pub width: u32,
    pub height: u32,
}

impl Camera {
    pub fn new(
        [fx, fy, cx, cy]: [f64; 4],
        rotation: Mat3,
        translation: Vec3,
        width: u32,
        height: u32,
    ) -> Result<Self, RenderError> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            rotation,
            translation,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `eye` looking at `target`, with world `up` mapping to image up.
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        intrinsics: [f64; 4],
        width: u32,
        height: u32,
    ) -> Result<Self, RenderError> {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up);
        if right.norm() < 1e-12 {
            return Err(RenderError::InvalidCamera("view direction parallel to up".into()));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rotation = Mat3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        Self::new(intrinsics, rotation, translation, width, height)
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(RenderError::InvalidCamera(format!(
                "focal lengths must be positive, got ({}, {})",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(RenderError::InvalidCamera("empty resolution".into()));
        }
        let ortho = (self.rotation.transpose() * self.rotation - Mat3::identity()).amax();
        if !(ortho <= 1e-6) || !(self.rotation.determinant() > 0.0) {
            return Err(RenderError::InvalidCamera(format!(
                "rotation is not orthonormal (error {ortho:e})"
            )));
        }
        if !self.translation.iter().all(|v| v.is_finite())
            || ![self.cx, self.cy].iter().all(|v| v.is_finite())
        {
            return Err(RenderError::InvalidCamera("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Continuous pixel coordinate of a world point, or `None` behind the camera.
    pub fn project(&self, p: &Vec3) -> Option<[f64; 2]> {
        let c = self.rotation * p + self.translation;
        if c.z <= 0.0 {
            return None;
        }
        Some([self.fx * c.x / c.z + self.cx, self.fy * c.y / c.z + self.cy])
    }

    /// Ray through a continuous pixel coordinate.
    pub fn ray_through(&self, px: f64, py: f64) -> Ray {
        let local = Vec3::new((px - self.cx) / self.fx, (py - self.cy) / self.fy, 1.0);
        Ray {
            origin: self.center(),
            direction: (self.rotation.transpose() * local).normalize(),
            near: RAY_EPSILON,
            far: f64::INFINITY,
        }
    }

    /// Rays through the centers of the given integer pixels.
    pub fn generate_rays(&self, pixels: &[(u32, u32)]) -> Result<Vec<Ray>, RenderError> {
        pixels
            .iter()
            .map(|&(x, y)| {
                if x >= self.width || y >= self.height {
                    return Err(RenderError::PixelOutOfBounds {
                        x,
                        y,
                        width: self.width,
                        height: self.height,
                    });
                }
                Ok(self.ray_through(x as f64 + 0.5, y as f64 + 0.5))
            })
            .collect()
    }
}

/// Text serialization, one block per camera. Floats use Rust's shortest
/// round-trip formatting so values survive exactly.
pub fn write_cameras(cameras: &[Camera]) -> String {
    let mut s = String::new();
    writeln!(s, "{CAMERA_FILE_MAGIC} {CAMERA_FILE_VERSION}").unwrap();
    writeln!(s, "cameras {}", cameras.len()).unwrap();
    for (k, c) in cameras.iter().enumerate() {
        writeln!(s, "camera {k}").unwrap();
        writeln!(s, "resolution {} {}", c.width, c.height).unwrap();
        writeln!(s, "intrinsics {:?} {:?} {:?} {:?}", c.fx, c.fy, c.cx, c.cy).unwrap();
        let r = &c.rotation;
        write!(s, "rotation").unwrap();
        for i in 0..3 {
            for j in 0..3 {
                write!(s, " {:?}", r[(i, j)]).unwrap();
            }
        }
        writeln!(s).unwrap();
        let t = &c.translation;
        writeln!(s, "translation {:?} {:?} {:?}", t.x, t.y, t.z).unwrap();
    }
    s
}

pub fn read_cameras(text: &str) -> Result<Vec<Camera>, RenderError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let mut next = |key: &str| -> Result<(usize, Vec<String>), RenderError> {
        let (no, line) = lines
            .next()
            .ok_or_else(|| RenderError::Format(format!("unexpected end of file, expected '{key}'")))?;
        let mut parts = line.split_whitespace();
        let head = parts.next().unwrap_or_default();
        if head != key {
            return Err(RenderError::Format(format!(
                "line {}: expected '{key}', found '{head}'",
                no + 1
            )));
        }
        Ok((no + 1, parts.map(str::to_string).collect()))
    };
    let nums = |no: usize, parts: &[String], n: usize| -> Result<Vec<f64>, RenderError> {
        if parts.len() != n {
            return Err(RenderError::Format(format!(
                "line {no}: expected {n} values, found {}",
                parts.len()
            )));
        }
        parts
            .iter()
            .map(|p| {
                p.parse::<f64>()
                    .map_err(|e| RenderError::Format(format!("line {no}: {e}")))
            })
            .collect()
    };

    let (no, header) = next(CAMERA_FILE_MAGIC)?;
    let version: u32 = header
        .first()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| RenderError::Format(format!("line {no}: missing version")))?;
    if version != CAMERA_FILE_VERSION {
        return Err(RenderError::Format(format!(
            "camera file version {version}, expected {CAMERA_FILE_VERSION}"
        )));
    }
    let (no, count) = next("cameras")?;
    let count = nums(no, &count, 1)?[0] as usize;
    let mut cameras = Vec::with_capacity(count);
    for _ in 0..count {
        next("camera")?;
        let (no, res) = next("resolution")?;
        let res = nums(no, &res, 2)?;
        let (no, intr) = next("intrinsics")?;
        let intr = nums(no, &intr, 4)?;
        let (no, rot) = next("rotation")?;
        let rot = nums(no, &rot, 9)?;
        let (no, tr) = next("translation")?;
        let tr = nums(no, &tr, 3)?;
        cameras.push(Camera::new(
            [intr[0], intr[1], intr[2], intr[3]],
            Mat3::from_row_slice(&rot),
            Vec3::new(tr[0], tr[1], tr[2]),
            res[0] as u32,
            res[1] as u32,
        )?);
    }
    if let Some((no, _)) = lines.next() {
        return Err(RenderError::Format(format!("line {}: trailing content", no + 1)));
    }
    Ok(cameras)
}

pub fn save_cameras(path: &Path, cameras: &[Camera]) -> Result<(), RenderError> {
    std::fs::write(path, write_cameras(cameras)).map_err(|e| RenderError::io(path, e))
}

pub fn load_cameras(path: &Path) -> Result<Vec<Camera>, RenderError> {
    let text = std::fs::read_to_string(path).map_err(|e| RenderError::io(path, e))?;
    read_cameras(&text)
}
