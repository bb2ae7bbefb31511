//! Procedural capsule-limbed humanoid.
//!
//! Every part (torso, head, each limb) is a closed capsule with its own
//! rectangle in the UV atlas. Limbs are a single capsule spanning two bones,
//! so bending the middle joint produces a smoothly skinned elbow or knee.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use super::{BodyError, SkinnedBodyModel};
use crate::geometry::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapsuleSpec {
    pub length: f64,
    pub radius: f64,
}

/// Where a limb's first joint hangs from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Anchor {
    Pelvis,
    Chest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimbSpec {
    pub name: String,
    pub anchor: Anchor,
    /// Rest position of the limb's first joint.
    pub attach: [f64; 3],
    /// Rest direction of the limb axis (normalized on use).
    pub direction: [f64; 3],
    pub upper_length: f64,
    pub lower_length: f64,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyBodySpec {
    /// Rest position of the root (pelvis) joint. The torso axis starts here.
    pub pelvis: [f64; 3],
    pub torso: CapsuleSpec,
    /// Gap between the top of the torso axis and the neck joint.
    pub neck_length: f64,
    pub head: CapsuleSpec,
    pub limbs: Vec<LimbSpec>,
    /// Segments around each capsule.
    pub around: usize,
    /// Ring subdivisions along each cylindrical section.
    pub rings: usize,
    /// Rings per hemispherical cap (the pole excluded).
    pub cap_rings: usize,
    /// Skinning falloff radius (meters).
    pub blend_radius: f64,
    /// Gap between atlas charts.
    pub atlas_margin: f64,
}

impl Default for ToyBodySpec {
    fn default() -> Self {
        let arm = |name: &str, side: f64| LimbSpec {
            name: name.into(),
            anchor: Anchor::Chest,
            attach: [0.2 * side, 0.0, 1.38],
            direction: [0.25 * side, 0.0, -1.0],
            upper_length: 0.28,
            lower_length: 0.26,
            radius: 0.045,
        };
        let leg = |name: &str, side: f64| LimbSpec {
            name: name.into(),
            anchor: Anchor::Pelvis,
            attach: [0.09 * side, 0.0, 0.92],
            direction: [0.0, 0.0, -1.0],
            upper_length: 0.42,
            lower_length: 0.42,
            radius: 0.06,
        };
        Self {
            pelvis: [0.0, 0.0, 0.95],
            torso: CapsuleSpec {
                length: 0.45,
                radius: 0.14,
            },
            neck_length: 0.12,
            head: CapsuleSpec {
                length: 0.08,
                radius: 0.1,
            },
            limbs: vec![
                arm("left_arm", 1.0),
                arm("right_arm", -1.0),
                leg("left_leg", 1.0),
                leg("right_leg", -1.0),
            ],
            around: 16,
            rings: 10,
            cap_rings: 3,
            blend_radius: 0.05,
            atlas_margin: 0.01,
        }
    }
}

/// One part's rectangle in the UV atlas.
#[derive(Debug, Clone, PartialEq)]
pub struct AtlasChart {
    pub name: String,
    /// `[u0, v0, u1, v1]`.
    pub rect: [f64; 4],
    /// Joint whose bend drives this part's pose-dependent appearance.
    pub adjacent_joint: usize,
}

impl AtlasChart {
    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= self.rect[0] && u <= self.rect[2] && v >= self.rect[1] && v <= self.rect[3]
    }

    /// Chart-local coordinates in `[0,1]^2`.
    pub fn local(&self, u: f64, v: f64) -> (f64, f64) {
        (
            (u - self.rect[0]) / (self.rect[2] - self.rect[0]),
            (v - self.rect[1]) / (self.rect[3] - self.rect[1]),
        )
    }

    fn global(&self, lu: f64, lv: f64) -> [f64; 2] {
        [
            self.rect[0] + lu * (self.rect[2] - self.rect[0]),
            self.rect[1] + lv * (self.rect[3] - self.rect[1]),
        ]
    }
}

pub const ROOT_JOINT: usize = 0;
pub const CHEST_JOINT: usize = 1;
pub const NECK_JOINT: usize = 2;

impl ToyBodySpec {
    pub fn part_count(&self) -> usize {
        2 + self.limbs.len()
    }

    pub fn joint_count(&self) -> usize {
        3 + 2 * self.limbs.len()
    }

    /// First joint of limb `i`; the bend joint is the next index.
    pub fn limb_joint(&self, limb: usize) -> usize {
        3 + 2 * limb
    }

    pub fn validate(&self) -> Result<(), BodyError> {
        let bad = |msg: String| Err(BodyError::DegenerateSpec(msg));
        if self.around < 3 {
            return bad(format!("around = {} (< 3)", self.around));
        }
        if self.rings < 1 || self.cap_rings < 1 {
            return bad("rings and cap_rings must be at least 1".into());
        }
        for (name, c) in [("torso", &self.torso), ("head", &self.head)] {
            if !(c.length > 0.0 && c.radius > 0.0) {
                return bad(format!("{name} has non-positive length or radius"));
            }
        }
        if !(self.neck_length > 0.0) {
            return bad("neck_length must be positive".into());
        }
        for limb in &self.limbs {
            if !(limb.upper_length > 0.0 && limb.lower_length > 0.0 && limb.radius > 0.0) {
                return bad(format!("limb '{}' has a zero-length segment or radius", limb.name));
            }
            if Vec3::from(limb.direction).norm() == 0.0 {
                return bad(format!("limb '{}' has a zero direction", limb.name));
            }
        }
        if !(self.blend_radius > 0.0) {
            return bad("blend_radius must be positive".into());
        }
        if !(0.0..0.2).contains(&self.atlas_margin) {
            return bad("atlas_margin must be in [0, 0.2)".into());
        }
        Ok(())
    }

    /// Atlas layout: parts on a square grid, in order torso, head, limbs.
    pub fn atlas(&self) -> Vec<AtlasChart> {
        let parts = self.part_count();
        let cols = (parts as f64).sqrt().ceil() as usize;
        let rows = parts.div_ceil(cols);
        let m = self.atlas_margin;
        let cw = 1.0 / cols as f64;
        let rh = 1.0 / rows as f64;
        (0..parts)
            .map(|p| {
                let (c, r) = (p % cols, p / cols);
                let (name, adjacent_joint) = match p {
                    0 => ("torso".to_string(), CHEST_JOINT),
                    1 => ("head".to_string(), NECK_JOINT),
                    _ => (self.limbs[p - 2].name.clone(), self.limb_joint(p - 2) + 1),
                };
                AtlasChart {
                    name,
                    rect: [
                        c as f64 * cw + m * 0.5,
                        r as f64 * rh + m * 0.5,
                        (c + 1) as f64 * cw - m * 0.5,
                        (r + 1) as f64 * rh - m * 0.5,
                    ],
                    adjacent_joint,
                }
            })
            .collect()
    }

    /// Chart containing texel `(u, v)`, if any.
    pub fn chart_at(&self, u: f64, v: f64) -> Option<usize> {
        self.atlas().iter().position(|c| c.contains(u, v))
    }

    fn rest_joints(&self) -> (Vec<Vec3>, Vec<Option<usize>>) {
        let pelvis = Vec3::from(self.pelvis);
        let chest = pelvis + Vec3::new(0.0, 0.0, self.torso.length);
        let neck = chest + Vec3::new(0.0, 0.0, self.neck_length);
        let mut joints = vec![pelvis, chest, neck];
        let mut parent = vec![None, Some(ROOT_JOINT), Some(CHEST_JOINT)];
        for limb in &self.limbs {
            let a = Vec3::from(limb.attach);
            let dir = Vec3::from(limb.direction).normalize();
            let first = joints.len();
            joints.push(a);
            joints.push(a + dir * limb.upper_length);
            parent.push(Some(match limb.anchor {
                Anchor::Pelvis => ROOT_JOINT,
                Anchor::Chest => CHEST_JOINT,
            }));
            parent.push(Some(first));
        }
        (joints, parent)
    }
}

/// A bone segment driving part of the skin.
struct Bone {
    joint: usize,
    start: Vec3,
    end: Vec3,
}

fn segment_distance(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

struct PartGeometry {
    origin: Vec3,
    axis: Vec3,
    length: f64,
    radius: f64,
    bones: [Bone; 2],
}

/// Builds the toy humanoid.
pub fn generate_toy_body(spec: &ToyBodySpec) -> Result<SkinnedBodyModel, BodyError> {
    spec.validate()?;
    let (joints, parent) = spec.rest_joints();
    let head_top = joints[NECK_JOINT]
        + Vec3::new(0.0, 0.0, 2.0 * spec.head.radius + spec.head.length);

    let mut parts = vec![
        PartGeometry {
            origin: joints[ROOT_JOINT],
            axis: Vec3::z(),
            length: spec.torso.length,
            radius: spec.torso.radius,
            bones: [
                Bone {
                    joint: ROOT_JOINT,
                    start: joints[ROOT_JOINT],
                    end: joints[CHEST_JOINT],
                },
                Bone {
                    joint: CHEST_JOINT,
                    start: joints[CHEST_JOINT],
                    end: joints[NECK_JOINT],
                },
            ],
        },
        PartGeometry {
            origin: joints[NECK_JOINT] + Vec3::new(0.0, 0.0, spec.head.radius),
            axis: Vec3::z(),
            length: spec.head.length,
            radius: spec.head.radius,
            bones: [
                Bone {
                    joint: CHEST_JOINT,
                    start: joints[CHEST_JOINT],
                    end: joints[NECK_JOINT],
                },
                Bone {
                    joint: NECK_JOINT,
                    start: joints[NECK_JOINT],
                    end: head_top,
                },
            ],
        },
    ];
    for (li, limb) in spec.limbs.iter().enumerate() {
        let j0 = spec.limb_joint(li);
        let dir = Vec3::from(limb.direction).normalize();
        let end = joints[j0 + 1] + dir * limb.lower_length;
        parts.push(PartGeometry {
            origin: joints[j0],
            axis: dir,
            length: limb.upper_length + limb.lower_length,
            radius: limb.radius,
            bones: [
                Bone {
                    joint: j0,
                    start: joints[j0],
                    end: joints[j0 + 1],
                },
                Bone {
                    joint: j0 + 1,
                    start: joints[j0 + 1],
                    end,
                },
            ],
        });
    }

    let atlas = spec.atlas();
    let jc = joints.len();
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut uvs = Vec::new();
    let mut weights = Vec::new();
    for (part, chart) in parts.iter().zip(&atlas) {
        let base = vertices.len() as u32;
        let (verts, part_faces, part_uv) = capsule(part, spec, chart);
        for v in &verts {
            weights.extend(skin_weights(v, &part.bones, spec.blend_radius, jc));
        }
        vertices.extend(verts);
        faces.extend(part_faces.iter().map(|f| f.map(|i| i + base)));
        uvs.extend(part_uv);
    }
    SkinnedBodyModel::new(vertices, faces, uvs, weights, joints, parent, None, None)
}

fn skin_weights(p: &Vec3, bones: &[Bone; 2], s: f64, joint_count: usize) -> Vec<f64> {
    let d: Vec<f64> = bones
        .iter()
        .map(|b| segment_distance(p, &b.start, &b.end))
        .collect();
    let dmin2 = d.iter().map(|x| x * x).fold(f64::INFINITY, f64::min);
    let raw: Vec<f64> = d
        .iter()
        .map(|x| (-(x * x - dmin2) / (2.0 * s * s)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    let mut w = vec![0.0; joint_count];
    for (b, r) in bones.iter().zip(raw) {
        w[b.joint] += r / total;
    }
    w
}

type CapsuleMesh = (Vec<Vec3>, Vec<[u32; 3]>, Vec<[[f64; 2]; 3]>);

/// Pole-to-pole capsule around `part.axis`, with texels in `chart`.
fn capsule(part: &PartGeometry, spec: &ToyBodySpec, chart: &AtlasChart) -> CapsuleMesh {
    let r = part.radius;
    let len = part.length;
    // Profile from bottom pole to top pole: (offset along axis, ring radius).
    let mut profile = vec![(-r, 0.0)];
    for k in 1..spec.cap_rings {
        let a = -FRAC_PI_2 + k as f64 * FRAC_PI_2 / spec.cap_rings as f64;
        profile.push((r * a.sin(), r * a.cos()));
    }
    for i in 0..=spec.rings {
        profile.push((len * i as f64 / spec.rings as f64, r));
    }
    for k in 1..spec.cap_rings {
        let a = k as f64 * FRAC_PI_2 / spec.cap_rings as f64;
        profile.push((len + r * a.sin(), r * a.cos()));
    }
    profile.push((len + r, 0.0));

    let mut arc = vec![0.0];
    for w in profile.windows(2) {
        let step = ((w[1].0 - w[0].0).powi(2) + (w[1].1 - w[0].1).powi(2)).sqrt();
        arc.push(arc.last().unwrap() + step);
    }
    let total = *arc.last().unwrap();
    let lv: Vec<f64> = arc.iter().map(|a| a / total).collect();

    // Orthonormal frame around the axis.
    let e = part.axis;
    let helper = if e.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let p = e.cross(&helper).normalize();
    let q = e.cross(&p);

    let n = spec.around;
    let rings = profile.len() - 2;
    let mut verts = vec![part.origin + e * profile[0].0];
    for (off, rad) in &profile[1..=rings] {
        for j in 0..n {
            let phi = 2.0 * PI * j as f64 / n as f64;
            verts.push(part.origin + e * *off + (p * phi.cos() + q * phi.sin()) * *rad);
        }
    }
    verts.push(part.origin + e * profile[rings + 1].0);
    let top = (verts.len() - 1) as u32;
    let ring_vertex = |ring: usize, j: usize| (1 + ring * n + j % n) as u32;
    let uv = |lu: f64, ring_row: usize| chart.global(lu, lv[ring_row]);

    let mut faces = Vec::new();
    let mut uvs = Vec::new();
    for j in 0..n {
        let (u0, u1) = (j as f64 / n as f64, (j + 1) as f64 / n as f64);
        let umid = (u0 + u1) * 0.5;
        // Bottom fan (outward normals point away from the axis).
        faces.push([0, ring_vertex(0, j + 1), ring_vertex(0, j)]);
        uvs.push([uv(umid, 0), uv(u1, 1), uv(u0, 1)]);
        for ring in 0..rings - 1 {
            let (a, b) = (ring_vertex(ring, j), ring_vertex(ring, j + 1));
            let (c, d) = (ring_vertex(ring + 1, j), ring_vertex(ring + 1, j + 1));
            faces.push([a, b, d]);
            uvs.push([uv(u0, ring + 1), uv(u1, ring + 1), uv(u1, ring + 2)]);
            faces.push([a, d, c]);
            uvs.push([uv(u0, ring + 1), uv(u1, ring + 2), uv(u0, ring + 2)]);
        }
        faces.push([ring_vertex(rings - 1, j), ring_vertex(rings - 1, j + 1), top]);
        uvs.push([uv(u0, rings), uv(u1, rings), uv(umid, rings + 1)]);
    }
    (verts, faces, uvs)
}
