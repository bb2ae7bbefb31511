//! Binary body container.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic    8 bytes  "NDFBODY\0"
//! version  u32      = 1
//! count    u32      number of sections that follow
//! section  repeated: tag [u8; 4], payload length u64, payload
//! ```
//!
//! Sections, in this order:
//!
//! | tag    | payload                                                      |
//! |--------|--------------------------------------------------------------|
//! | `VERT` | n: u64, then n * 3 f64                                       |
//! | `FACE` | m: u64, then m * 3 u32                                       |
//! | `UVCO` | m: u64, then m * 3 * 2 f64 (face, corner, u/v)               |
//! | `JNTS` | j: u64, then j * 3 f64                                       |
//! | `TREE` | j: u64, then j i64 parent indices (-1 for the root)          |
//! | `WGHT` | n: u64, j: u64, then n * j f64                               |
//! | `SHAP` | optional; n: u64, k: u64, then n * 3 * k f64                 |
//! | `PBLD` | optional; n: u64, k: u64, then n * 3 * k f64                 |
//!
//! Unknown tags are rejected. The loaded model is validated against every
//! model invariant.

use std::fs;
use std::path::Path;

use super::{BlendBasis, BodyError, SkinnedBodyModel};
use crate::geometry::Vec3;

pub const BODY_MAGIC: &[u8; 8] = b"NDFBODY\0";
pub const BODY_FORMAT_VERSION: u32 = 1;

const REQUIRED: [&str; 6] = ["VERT", "FACE", "UVCO", "JNTS", "TREE", "WGHT"];

pub fn write_body(model: &SkinnedBodyModel) -> Vec<u8> {
    let mut sections: Vec<([u8; 4], Vec<u8>)> = Vec::new();

    let mut p = Vec::new();
    put_u64(&mut p, model.vertex_count() as u64);
    for v in model.template_vertices() {
        v.iter().for_each(|x| put_f64(&mut p, *x));
    }
    sections.push((*b"VERT", p));

    let mut p = Vec::new();
    put_u64(&mut p, model.face_count() as u64);
    for f in model.faces() {
        f.iter().for_each(|i| p.extend_from_slice(&i.to_le_bytes()));
    }
    sections.push((*b"FACE", p));

    let mut p = Vec::new();
    put_u64(&mut p, model.face_count() as u64);
    for corners in model.uv_per_corner() {
        corners.iter().flatten().for_each(|x| put_f64(&mut p, *x));
    }
    sections.push((*b"UVCO", p));

    let mut p = Vec::new();
    put_u64(&mut p, model.joint_count() as u64);
    for j in model.joints_rest() {
        j.iter().for_each(|x| put_f64(&mut p, *x));
    }
    sections.push((*b"JNTS", p));

    let mut p = Vec::new();
    put_u64(&mut p, model.joint_count() as u64);
    for parent in model.parents() {
        let v: i64 = parent.map_or(-1, |x| x as i64);
        p.extend_from_slice(&v.to_le_bytes());
    }
    sections.push((*b"TREE", p));

    let mut p = Vec::new();
    put_u64(&mut p, model.vertex_count() as u64);
    put_u64(&mut p, model.joint_count() as u64);
    model.skinning_weights().iter().for_each(|x| put_f64(&mut p, *x));
    sections.push((*b"WGHT", p));

    for (tag, basis) in [(*b"SHAP", model.shape_dirs()), (*b"PBLD", model.pose_dirs())] {
        if let Some(b) = basis {
            let mut p = Vec::new();
            put_u64(&mut p, model.vertex_count() as u64);
            put_u64(&mut p, b.components as u64);
            b.data.iter().for_each(|x| put_f64(&mut p, *x));
            sections.push((tag, p));
        }
    }

    let mut out = Vec::new();
    out.extend_from_slice(BODY_MAGIC);
    out.extend_from_slice(&BODY_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(sections.len() as u32).to_le_bytes());
    for (tag, payload) in sections {
        out.extend_from_slice(&tag);
        put_u64(&mut out, payload.len() as u64);
        out.extend_from_slice(&payload);
    }
    out
}

pub fn save_body(model: &SkinnedBodyModel, path: impl AsRef<Path>) -> Result<(), BodyError> {
    fs::write(path, write_body(model))?;
    Ok(())
}

pub fn load_body(path: impl AsRef<Path>) -> Result<SkinnedBodyModel, BodyError> {
    read_body(&fs::read(path)?)
}

pub fn read_body(bytes: &[u8]) -> Result<SkinnedBodyModel, BodyError> {
    let mut r = Cursor::new(bytes, "header");
    if r.take(8)? != BODY_MAGIC {
        return Err(BodyError::Format("bad magic".into()));
    }
    let version = r.u32()?;
    if version != BODY_FORMAT_VERSION {
        return Err(BodyError::Version {
            found: version,
            expected: BODY_FORMAT_VERSION,
        });
    }
    let count = r.u32()? as usize;

    let mut vertices = None;
    let mut faces = None;
    let mut uvs = None;
    let mut joints = None;
    let mut tree = None;
    let mut weights = None;
    let mut shape = None;
    let mut pose = None;
    let mut seen = Vec::new();

    for idx in 0..count {
        // A file cut before this section's header is missing the section.
        let expected_name = REQUIRED
            .iter()
            .find(|t| !seen.iter().any(|s: &String| s == *t))
            .copied()
            .unwrap_or("optional");
        if r.remaining() < 12 {
            return Err(BodyError::Truncated(format!(
                "{expected_name} (section {idx} header)"
            )));
        }
        let tag = r.take(4)?.to_vec();
        let name = String::from_utf8_lossy(&tag).into_owned();
        let len = r.u64()? as usize;
        if r.remaining() < len {
            return Err(BodyError::Truncated(name));
        }
        let mut s = Cursor::new(r.take(len)?, &name);
        match &tag[..] {
            b"VERT" => {
                let n = s.u64()? as usize;
                vertices = Some(s.vec3s(n)?);
            }
            b"FACE" => {
                let m = s.u64()? as usize;
                let mut f = Vec::with_capacity(m);
                for _ in 0..m {
                    f.push([s.u32()?, s.u32()?, s.u32()?]);
                }
                faces = Some(f);
            }
            b"UVCO" => {
                let m = s.u64()? as usize;
                let mut u = Vec::with_capacity(m);
                for _ in 0..m {
                    let mut c = [[0.0; 2]; 3];
                    for corner in &mut c {
                        *corner = [s.f64()?, s.f64()?];
                    }
                    u.push(c);
                }
                uvs = Some(u);
            }
            b"JNTS" => {
                let j = s.u64()? as usize;
                joints = Some(s.vec3s(j)?);
            }
            b"TREE" => {
                let j = s.u64()? as usize;
                let mut t = Vec::with_capacity(j);
                for _ in 0..j {
                    let p = s.i64()?;
                    t.push(if p < 0 { None } else { Some(p as usize) });
                }
                tree = Some(t);
            }
            b"WGHT" => {
                let n = s.u64()? as usize;
                let j = s.u64()? as usize;
                weights = Some(s.f64s(n * j)?);
            }
            b"SHAP" | b"PBLD" => {
                let n = s.u64()? as usize;
                let k = s.u64()? as usize;
                let basis = BlendBasis {
                    components: k,
                    data: s.f64s(n * 3 * k)?,
                };
                if &tag[..] == b"SHAP" {
                    shape = Some(basis);
                } else {
                    pose = Some(basis);
                }
            }
            _ => return Err(BodyError::Format(format!("unknown section '{name}'"))),
        }
        if s.remaining() != 0 {
            return Err(BodyError::Format(format!(
                "section '{name}' has {} trailing bytes",
                s.remaining()
            )));
        }
        seen.push(name);
    }
    if r.remaining() != 0 {
        return Err(BodyError::Format("trailing bytes after last section".into()));
    }

    let missing = |name: &str| BodyError::MissingSection(name.into());
    SkinnedBodyModel::new(
        vertices.ok_or_else(|| missing("VERT"))?,
        faces.ok_or_else(|| missing("FACE"))?,
        uvs.ok_or_else(|| missing("UVCO"))?,
        weights.ok_or_else(|| missing("WGHT"))?,
        joints.ok_or_else(|| missing("JNTS"))?,
        tree.ok_or_else(|| missing("TREE"))?,
        shape,
        pose,
    )
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
    section: String,
}

impl<'a> Cursor<'a> {
    fn new(data: &'a [u8], section: &str) -> Self {
        Self {
            data,
            pos: 0,
            section: section.to_string(),
        }
    }

    fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], BodyError> {
        if self.remaining() < n {
            return Err(BodyError::Truncated(self.section.clone()));
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, BodyError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, BodyError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn i64(&mut self) -> Result<i64, BodyError> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, BodyError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, BodyError> {
        if n.checked_mul(8).is_none_or(|b| b > self.remaining()) {
            return Err(BodyError::Truncated(self.section.clone()));
        }
        (0..n).map(|_| self.f64()).collect()
    }

    fn vec3s(&mut self, n: usize) -> Result<Vec<Vec3>, BodyError> {
        let flat = self.f64s(n.checked_mul(3).unwrap_or(usize::MAX))?;
        Ok(flat.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::{generate_toy_body, ToyBodySpec};

    fn toy() -> SkinnedBodyModel {
        let spec = ToyBodySpec {
            around: 6,
            rings: 2,
            cap_rings: 1,
            ..Default::default()
        };
        generate_toy_body(&spec).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let body = toy();
        let bytes = write_body(&body);
        let back = read_body(&bytes).unwrap();
        assert_eq!(back, body);
        assert_eq!(write_body(&back), bytes);
    }

    #[test]
    fn round_trip_with_bases() {
        let b = toy();
        let n = b.vertex_count();
        let mut shape = BlendBasis::zeros(n, 3);
        shape.data.iter_mut().enumerate().for_each(|(i, x)| *x = i as f64 * 1e-3);
        let pose = BlendBasis::zeros(n, 9 * (b.joint_count() - 1));
        let body = SkinnedBodyModel::new(
            b.template_vertices().to_vec(),
            b.faces().to_vec(),
            b.uv_per_corner().to_vec(),
            b.skinning_weights().to_vec(),
            b.joints_rest().to_vec(),
            b.parents().to_vec(),
            Some(shape),
            Some(pose),
        )
        .unwrap();
        assert_eq!(read_body(&write_body(&body)).unwrap(), body);
    }

    #[test]
    fn truncated_file_names_the_section() {
        let bytes = write_body(&toy());
        // Cut inside the FACE section: header (16) + VERT section + a bit.
        let vert_len = u64::from_le_bytes(bytes[20..28].try_into().unwrap()) as usize;
        let cut = 16 + 12 + vert_len + 12 + 10;
        let err = read_body(&bytes[..cut]).unwrap_err();
        assert!(matches!(&err, BodyError::Truncated(s) if s.contains("FACE")), "{err}");

        // Cut exactly between sections.
        let err = read_body(&bytes[..16 + 12 + vert_len]).unwrap_err();
        assert!(err.to_string().contains("FACE"), "{err}");
    }

    #[test]
    fn bad_weights_are_rejected() {
        let body = toy();
        let mut bytes = write_body(&body);
        // Halve the first vertex's weights in place.
        let j = body.joint_count();
        let pos = find_section(&bytes, b"WGHT") + 16;
        for k in 0..j {
            let at = pos + 8 * k;
            let w = f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
            bytes[at..at + 8].copy_from_slice(&(w * 0.5).to_le_bytes());
        }
        let err = read_body(&bytes).unwrap_err();
        assert!(
            matches!(err, BodyError::WeightsNotNormalized { vertex: 0, sum } if (sum - 0.5).abs() < 1e-12)
        );
    }

    #[test]
    fn wrong_version_is_rejected() {
        let mut bytes = write_body(&toy());
        bytes[8..12].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(read_body(&bytes), Err(BodyError::Version { found: 7, .. })));
    }

    fn find_section(bytes: &[u8], tag: &[u8; 4]) -> usize {
        let mut pos = 16;
        loop {
            let len = u64::from_le_bytes(bytes[pos + 4..pos + 12].try_into().unwrap()) as usize;
            if &bytes[pos..pos + 4] == tag {
                return pos + 12;
            }
            pos += 12 + len;
        }
    }
}
