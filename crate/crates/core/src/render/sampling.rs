use rand::Rng;

use crate::body::PosedMesh;
use crate::geometry::{Aabb, Vec3};
use crate::projection::{accept_sample, closest_point_within, ProjectionError, ProjectionResult, TriangleBvh};

use super::Ray;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub position: Vec3,
    /// Distance to the previous accepted sample, or to `near` for the first.
    pub delta: f64,
    pub projection: ProjectionResult,
    /// Coordinate that entered the density net; equal to the projection
    /// coordinate until a field evaluation overwrites it.
    pub deformed: [f64; 3],
}

/// Accepted quadrature samples of one ray, sorted front to back.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SampleBatch {
    pub near: f64,
    pub far: f64,
    pub samples: Vec<Sample>,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn deltas(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.delta).collect()
    }
}

/// Interval of `ray` inside `bounds`, clipped to the ray's own `[near, far]`.
pub fn ray_bounds(ray: &Ray, bounds: &Aabb) -> Option<(f64, f64)> {
    let (t0, t1) = bounds.ray_interval(&ray.origin, &ray.direction)?;
    let near = t0.max(ray.near);
    let far = t1.min(ray.far);
    (near < far).then_some((near, far))
}

/// Stratified depths in `[near, far]`: stratum midpoints, or a uniform
/// position inside each stratum when `jitter` is given.
pub fn candidate_depths<R: Rng>(near: f64, far: f64, count: usize, jitter: Option<&mut R>) -> Vec<f64> {
    let step = (far - near) / count as f64;
    match jitter {
        None => (0..count).map(|i| near + (i as f64 + 0.5) * step).collect(),
        Some(rng) => (0..count)
            .map(|i| near + (i as f64 + rng.gen::<f64>()) * step)
            .collect(),
    }
}

/// Geometry-guided sampling: candidates further than `delta_n` from the
/// surface are discarded.
pub fn sample_ray<R: Rng>(
    ray: &Ray,
    bvh: &TriangleBvh,
    mesh: &PosedMesh,
    count: usize,
    delta_n: f64,
    jitter: Option<&mut R>,
) -> Result<SampleBatch, ProjectionError> {
    if !(delta_n > 0.0) {
        return Err(ProjectionError::NonPositiveThreshold(delta_n));
    }
    let mut batch = SampleBatch {
        near: ray.near,
        far: ray.far,
        samples: Vec::new(),
    };
    let mut prev = ray.near;
    for t in candidate_depths(ray.near, ray.far, count, jitter) {
        let x = ray.at(t);
        let Some(projection) = closest_point_within(bvh, mesh, &x, delta_n) else {
            continue;
        };
        if !accept_sample(&projection, delta_n)? {
            continue;
        }
        batch.samples.push(Sample {
            t,
            position: x,
            delta: t - prev,
            projection,
            deformed: projection.coords(),
        });
        prev = t;
    }
    Ok(batch)
}
