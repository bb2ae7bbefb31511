//! RGB images in `[0,1]` with 8-bit PNG and 32-bit float PFM storage.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image shape mismatch: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(u32, u32, u32, u32),
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Row-major RGB image, pixel `(x, y)` at index `y * width + x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<[f64; 3]>,
}

impl Image {
    pub fn filled(width: u32, height: u32, color: [f64; 3]) -> Self {
        Self {
            width,
            height,
            pixels: vec![color; width as usize * height as usize],
        }
    }

    pub fn get(&self, x: u32, y: u32) -> [f64; 3] {
        self.pixels[(y * self.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, c: [f64; 3]) {
        let i = (y * self.width + x) as usize;
        self.pixels[i] = c;
    }

    pub fn same_shape(&self, other: &Image) -> Result<(), ImageError> {
        if self.width != other.width || self.height != other.height {
            return Err(ImageError::ShapeMismatch(
                self.width,
                self.height,
                other.width,
                other.height,
            ));
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        self.pixels
            .iter()
            .zip(&other.pixels)
            .flat_map(|(a, b)| (0..3).map(move |k| (a[k] - b[k]).abs()))
            .fold(0.0, f64::max)
    }

    /// Channel values rounded to 8 bits.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .flat_map(|p| p.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
            .collect()
    }

    pub fn save_png(&self, path: &Path) -> Result<(), ImageError> {
        let buf = image::RgbImage::from_raw(self.width, self.height, self.to_rgb8())
            .expect("buffer matches dimensions");
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| format_err(path, e.to_string()))
    }

    pub fn load_png(path: &Path) -> Result<Self, ImageError> {
        let img = image::open(path)
            .map_err(|e| format_err(path, e.to_string()))?
            .to_rgb8();
        Ok(Self {
            width: img.width(),
            height: img.height(),
            pixels: img
                .pixels()
                .map(|p| [p[0] as f64 / 255.0, p[1] as f64 / 255.0, p[2] as f64 / 255.0])
                .collect(),
        })
    }

    /// Little-endian PFM. Values are stored as `f32`.
    pub fn write_pfm<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let mut buf = format!("PF\n{} {}\n-1.0\n", self.width, self.height).into_bytes();
        for y in (0..self.height).rev() {
            for x in 0..self.width {
                for v in self.get(x, y) {
                    buf.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
        }
        w.write_all(&buf)
    }

    pub fn read_pfm<R: Read>(r: R) -> Result<Self, String> {
        let mut r = BufReader::new(r);
        let mut header = Vec::new();
        while header.len() < 3 {
            let mut line = String::new();
            if r.read_line(&mut line).map_err(|e| e.to_string())? == 0 {
                return Err("truncated header".into());
            }
            header.extend(line.split_whitespace().map(str::to_string));
        }
        if header[0] != "PF" {
            return Err(format!("unsupported PFM kind '{}'", header[0]));
        }
        let width: u32 = header[1].parse().map_err(|_| "bad width".to_string())?;
        let height: u32 = header
            .get(2)
            .ok_or("missing height")?
            .parse()
            .map_err(|_| "bad height".to_string())?;
        let scale: f64 = match header.get(3) {
            Some(s) => s.parse().map_err(|_| "bad scale".to_string())?,
            None => {
                let mut line = String::new();
                r.read_line(&mut line).map_err(|e| e.to_string())?;
                line.trim().parse().map_err(|_| "bad scale".to_string())?
            }
        };
        let little = scale < 0.0;
        let mut data = Vec::new();
        r.read_to_end(&mut data).map_err(|e| e.to_string())?;
        let n = width as usize * height as usize * 3;
        if data.len() != n * 4 {
            return Err(format!("expected {} data bytes, found {}", n * 4, data.len()));
        }
        let mut img = Self::filled(width, height, [0.0; 3]);
        let mut vals = data.chunks_exact(4).map(|b| {
            let b: [u8; 4] = b.try_into().unwrap();
            (if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) }) as f64
        });
        for y in (0..height).rev() {
            for x in 0..width {
                let c = [vals.next().unwrap(), vals.next().unwrap(), vals.next().unwrap()];
                img.set(x, y, c);
            }
        }
        Ok(img)
    }

    pub fn save_pfm(&self, path: &Path) -> Result<(), ImageError> {
        let mut buf = Vec::new();
        self.write_pfm(&mut buf).expect("in-memory write");
        std::fs::write(path, buf).map_err(|e| io_err(path, e))
    }

    pub fn load_pfm(path: &Path) -> Result<Self, ImageError> {
        let f = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
        Self::read_pfm(f).map_err(|m| format_err(path, m))
    }
}

fn format_err(path: &Path, message: String) -> ImageError {
    ImageError::Format {
        path: path.display().to_string(),
        message,
    }
}

fn io_err(path: &Path, source: std::io::Error) -> ImageError {
    ImageError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient() -> Image {
        let mut img = Image::filled(5, 3, [0.0; 3]);
        for y in 0..3 {
            for x in 0..5 {
                img.set(x, y, [x as f64 / 4.0, y as f64 / 2.0, 0.3]);
            }
        }
        img
    }

    #[test]
    fn pfm_round_trip_is_exact_for_f32_values() {
        let img = gradient();
        let mut buf = Vec::new();
        img.write_pfm(&mut buf).unwrap();
        let back = Image::read_pfm(buf.as_slice()).unwrap();
        for (a, b) in img.pixels.iter().zip(&back.pixels) {
            for k in 0..3 {
                assert_eq!(a[k] as f32, b[k] as f32);
            }
        }
        let mut again = Vec::new();
        back.write_pfm(&mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn png_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.png");
        let img = gradient();
        img.save_png(&path).unwrap();
        let back = Image::load_png(&path).unwrap();
        assert_eq!((back.width, back.height), (5, 3));
        assert!(img.max_abs_diff(&back) <= 0.5 / 255.0 + 1e-12);
        assert_eq!(back.to_rgb8(), img.to_rgb8());
    }

    #[test]
    fn truncated_pfm_is_rejected() {
        let mut buf = Vec::new();
        gradient().write_pfm(&mut buf).unwrap();
        buf.truncate(buf.len() - 4);
        assert!(Image::read_pfm(buf.as_slice()).is_err());
    }
}
