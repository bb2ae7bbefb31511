//! Projection of observation-space points onto the posed reference surface.
//!
//! A point `x` maps to `(u, v, l)`: the texel coordinate of its closest
//! surface point and the unsigned distance to it. The closest point is an
//! exact global minimum over all triangles, accelerated by a [`TriangleBvh`].

mod bvh;

use thiserror::Error;

use crate::body::PosedMesh;
use crate::geometry::Vec3;

pub use bvh::{BvhNode, NodeKind, RayHit, TriangleBvh, LEAF_SIZE};

/// Distances within this window of the minimum count as ties; ties resolve
/// to the lowest face index.
pub const TIE_WINDOW: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum ProjectionError {
    #[error("cannot build a BVH over an empty mesh")]
    EmptyMesh,
    #[error("acceptance threshold must be positive, got {0}")]
    NonPositiveThreshold(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionResult {
    pub u: f64,
    pub v: f64,
    /// Unsigned distance to the surface (meters).
    pub l: f64,
    pub face: usize,
    pub bary: [f64; 3],
    /// The closest surface point.
    pub point: Vec3,
}

impl ProjectionResult {
    pub fn coords(&self) -> [f64; 3] {
        [self.u, self.v, self.l]
    }
}

/// Closest point on triangle `(a, b, c)` to `p`, by Voronoi-region
/// classification. Returns the point and its barycentric weights.
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> (Vec3, [f64; 3]) {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (*a, [1.0, 0.0, 0.0]);
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (*b, [0.0, 1.0, 0.0]);
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let t = d1 / (d1 - d3);
        return (a + ab * t, [1.0 - t, t, 0.0]);
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (*c, [0.0, 0.0, 1.0]);
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let t = d2 / (d2 - d6);
        return (a + ac * t, [1.0 - t, 0.0, t]);
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let t = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + (c - b) * t, [0.0, 1.0 - t, t]);
    }
    let denom = va + vb + vc;
    if !(denom > 0.0) || !denom.is_finite() {
        // Degenerate triangle: fall back to the best edge.
        return degenerate_closest(p, a, b, c);
    }
    let v = vb / denom;
    let w = vc / denom;
    (a + ab * v + ac * w, [1.0 - v - w, v, w])
}

fn degenerate_closest(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> (Vec3, [f64; 3]) {
    let seg = |s: &Vec3, e: &Vec3| {
        let d = e - s;
        let len2 = d.norm_squared();
        let t = if len2 > 0.0 {
            ((p - s).dot(&d) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        (s + d * t, t)
    };
    let candidates = [
        {
            let (q, t) = seg(a, b);
            (q, [1.0 - t, t, 0.0])
        },
        {
            let (q, t) = seg(b, c);
            (q, [0.0, 1.0 - t, t])
        },
        {
            let (q, t) = seg(a, c);
            (q, [1.0 - t, 0.0, t])
        },
    ];
    candidates
        .into_iter()
        .min_by(|x, y| (p - x.0).norm().total_cmp(&(p - y.0).norm()))
        .unwrap()
}

/// Tracks the running minimum plus every face inside the tie window.
pub(crate) struct NearestAccumulator {
    limit: f64,
    best: f64,
    candidates: Vec<(f64, usize, Vec3, [f64; 3])>,
}

impl NearestAccumulator {
    pub(crate) fn new(limit: f64) -> Self {
        Self {
            limit,
            best: f64::INFINITY,
            candidates: Vec::new(),
        }
    }

    /// Largest distance that can still matter.
    pub(crate) fn radius(&self) -> f64 {
        self.best.min(self.limit) + TIE_WINDOW
    }

    pub(crate) fn offer(&mut self, mesh: &PosedMesh, face: usize, x: &Vec3) {
        let [a, b, c] = mesh.triangle(face);
        let (q, bary) = closest_point_on_triangle(x, &a, &b, &c);
        let d = (x - q).norm();
        if d > self.radius() {
            return;
        }
        if d < self.best {
            self.best = d;
            let cut = self.radius();
            self.candidates.retain(|c| c.0 <= cut);
        }
        self.candidates.push((d, face, q, bary));
    }

    pub(crate) fn finish(self, mesh: &PosedMesh) -> Option<ProjectionResult> {
        if !(self.best < self.limit) {
            return None;
        }
        let cut = self.best + TIE_WINDOW;
        let (l, face, point, bary) = self
            .candidates
            .into_iter()
            .filter(|c| c.0 <= cut)
            .min_by_key(|c| c.1)?;
        let [u, v] = mesh.texel(face, bary);
        Some(ProjectionResult {
            u,
            v,
            l,
            face,
            bary,
            point,
        })
    }
}

/// Exhaustive scan over every face.
pub fn brute_force_closest(mesh: &PosedMesh, x: &Vec3) -> ProjectionResult {
    let mut acc = NearestAccumulator::new(f64::INFINITY);
    for face in 0..mesh.face_count() {
        acc.offer(mesh, face, x);
    }
    acc.finish(mesh).expect("mesh has at least one face")
}

pub fn closest_point(bvh: &TriangleBvh, mesh: &PosedMesh, x: &Vec3) -> ProjectionResult {
    bvh.nearest(mesh, x, f64::INFINITY)
        .expect("mesh has at least one face")
}

/// Like [`closest_point`], but only reports points strictly closer than
/// `max_distance`. Results that are reported are identical to the
/// unbounded query.
pub fn closest_point_within(
    bvh: &TriangleBvh,
    mesh: &PosedMesh,
    x: &Vec3,
    max_distance: f64,
) -> Option<ProjectionResult> {
    bvh.nearest(mesh, x, max_distance)
}

/// Geometry-guided acceptance: keep a sample only when it lies strictly
/// within `delta_n` of the surface.
pub fn accept_sample(result: &ProjectionResult, delta_n: f64) -> Result<bool, ProjectionError> {
    if !(delta_n > 0.0) {
        return Err(ProjectionError::NonPositiveThreshold(delta_n));
    }
    Ok(result.l < delta_n)
}
