//! Skinned parametric body model and linear blend skinning.
//!
//! A [`SkinnedBodyModel`] carries a rest-pose template, a per-face-corner UV
//! atlas, per-vertex skinning weights over a kinematic tree, and optional
//! linear shape and pose-corrective bases. Posing follows the usual skinned
//! model recipe: add the blend shapes to the template, then apply the
//! weighted sum of joint transforms to every vertex.

mod io;
mod toy;

use std::sync::Arc;

use nalgebra::{Matrix4, Vector4};
use thiserror::Error;

use crate::geometry::{skew, Aabb, Mat3, Vec3};

pub use io::{load_body, read_body, save_body, write_body, BODY_FORMAT_VERSION, BODY_MAGIC};
pub use toy::{generate_toy_body, Anchor, AtlasChart, CapsuleSpec, LimbSpec, ToyBodySpec};

const WEIGHT_SUM_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum BodyError {
    #[error("face {face} references vertex {index} but the mesh has {count} vertices")]
    FaceIndexOutOfRange {
        face: usize,
        index: u32,
        count: usize,
    },
    #[error("uv coordinate of face {face} corner {corner} is outside [0,1]^2: ({u}, {v})")]
    UvOutOfRange {
        face: usize,
        corner: usize,
        u: f64,
        v: f64,
    },
    #[error("skinning weights of vertex {vertex} sum to {sum}, expected 1")]
    WeightsNotNormalized { vertex: usize, sum: f64 },
    #[error("skinning weight of vertex {vertex} for joint {joint} is negative or non-finite: {value}")]
    InvalidWeight {
        vertex: usize,
        joint: usize,
        value: f64,
    },
    #[error("kinematic tree is invalid: {0}")]
    InvalidTree(String),
    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("degenerate toy-body spec: {0}")]
    DegenerateSpec(String),
    #[error("body file: {0}")]
    Format(String),
    #[error("body file is truncated in section '{0}'")]
    Truncated(String),
    #[error("body file is missing required section '{0}'")]
    MissingSection(String),
    #[error("unsupported body file version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Faces and their per-corner texel coordinates. Shared between a model and
/// every mesh posed from it.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceTopology {
    pub faces: Vec<[u32; 3]>,
    pub uv_per_corner: Vec<[[f64; 2]; 3]>,
}

impl SurfaceTopology {
    pub fn face_count(&self) -> usize {
        self.faces.len()
    }
}

/// Linear per-vertex basis: `offset(v) = sum_k coeff[k] * dirs[v][axis][k]`.
///
/// Stored row-major as `[vertex][axis][component]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlendBasis {
    pub components: usize,
    pub data: Vec<f64>,
}

impl BlendBasis {
    pub fn zeros(vertex_count: usize, components: usize) -> Self {
        Self {
            components,
            data: vec![0.0; vertex_count * 3 * components],
        }
    }

    fn apply(&self, coeffs: &[f64], vertices: &mut [Vec3]) {
        let k = self.components;
        for (vi, v) in vertices.iter_mut().enumerate() {
            for axis in 0..3 {
                let row = &self.data[(vi * 3 + axis) * k..(vi * 3 + axis + 1) * k];
                v[axis] += row.iter().zip(coeffs).map(|(d, c)| d * c).sum::<f64>();
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkinnedBodyModel {
    template_vertices: Vec<Vec3>,
    topology: Arc<SurfaceTopology>,
    /// Row-major `[vertex][joint]`.
    skinning_weights: Vec<f64>,
    joints_rest: Vec<Vec3>,
    parent: Vec<Option<usize>>,
    shape_dirs: Option<BlendBasis>,
    /// Driven by the flattened `R_j - I` of every non-root joint.
    pose_dirs: Option<BlendBasis>,
}

impl SkinnedBodyModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        template_vertices: Vec<Vec3>,
        faces: Vec<[u32; 3]>,
        uv_per_corner: Vec<[[f64; 2]; 3]>,
        skinning_weights: Vec<f64>,
        joints_rest: Vec<Vec3>,
        parent: Vec<Option<usize>>,
        shape_dirs: Option<BlendBasis>,
        pose_dirs: Option<BlendBasis>,
    ) -> Result<Self, BodyError> {
        let model = Self {
            template_vertices,
            topology: Arc::new(SurfaceTopology {
                faces,
                uv_per_corner,
            }),
            skinning_weights,
            joints_rest,
            parent,
            shape_dirs,
            pose_dirs,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), BodyError> {
        let n = self.template_vertices.len();
        let j = self.joints_rest.len();
        if self.template_vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(BodyError::NonFinite("template vertices"));
        }
        if self.joints_rest.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(BodyError::NonFinite("rest joints"));
        }
        let topo = &self.topology;
        if topo.uv_per_corner.len() != topo.faces.len() {
            return Err(BodyError::DimensionMismatch {
                what: "uv corners per face",
                expected: topo.faces.len(),
                actual: topo.uv_per_corner.len(),
            });
        }
        for (fi, face) in topo.faces.iter().enumerate() {
            for &idx in face {
                if idx as usize >= n {
                    return Err(BodyError::FaceIndexOutOfRange {
                        face: fi,
                        index: idx,
                        count: n,
                    });
                }
            }
        }
        for (fi, corners) in topo.uv_per_corner.iter().enumerate() {
            for (ci, uv) in corners.iter().enumerate() {
                if !(0.0..=1.0).contains(&uv[0]) || !(0.0..=1.0).contains(&uv[1]) {
                    return Err(BodyError::UvOutOfRange {
                        face: fi,
                        corner: ci,
                        u: uv[0],
                        v: uv[1],
                    });
                }
            }
        }
        if self.skinning_weights.len() != n * j {
            return Err(BodyError::DimensionMismatch {
                what: "skinning weights",
                expected: n * j,
                actual: self.skinning_weights.len(),
            });
        }
        for vi in 0..n {
            let row = &self.skinning_weights[vi * j..(vi + 1) * j];
            for (ji, &w) in row.iter().enumerate() {
                if !(w.is_finite() && w >= 0.0) {
                    return Err(BodyError::InvalidWeight {
                        vertex: vi,
                        joint: ji,
                        value: w,
                    });
                }
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
                return Err(BodyError::WeightsNotNormalized { vertex: vi, sum });
            }
        }
        validate_tree(&self.parent, j)?;
        if let Some(b) = &self.shape_dirs {
            check_basis("shape basis", b, n)?;
        }
        if let Some(b) = &self.pose_dirs {
            check_basis("pose basis", b, n)?;
            let expected = 9 * j.saturating_sub(1);
            if b.components != expected {
                return Err(BodyError::DimensionMismatch {
                    what: "pose basis components",
                    expected,
                    actual: b.components,
                });
            }
        }
        Ok(())
    }

    pub fn vertex_count(&self) -> usize {
        self.template_vertices.len()
    }

    pub fn joint_count(&self) -> usize {
        self.joints_rest.len()
    }

    pub fn face_count(&self) -> usize {
        self.topology.faces.len()
    }

    pub fn template_vertices(&self) -> &[Vec3] {
        &self.template_vertices
    }

    pub fn topology(&self) -> &Arc<SurfaceTopology> {
        &self.topology
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.topology.faces
    }

    pub fn uv_per_corner(&self) -> &[[[f64; 2]; 3]] {
        &self.topology.uv_per_corner
    }

    pub fn skinning_weights(&self) -> &[f64] {
        &self.skinning_weights
    }

    pub fn vertex_weights(&self, vertex: usize) -> &[f64] {
        let j = self.joint_count();
        &self.skinning_weights[vertex * j..(vertex + 1) * j]
    }

    pub fn joints_rest(&self) -> &[Vec3] {
        &self.joints_rest
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parent
    }

    pub fn shape_dirs(&self) -> Option<&BlendBasis> {
        self.shape_dirs.as_ref()
    }

    pub fn pose_dirs(&self) -> Option<&BlendBasis> {
        self.pose_dirs.as_ref()
    }

    pub fn shape_dim(&self) -> usize {
        self.shape_dirs.as_ref().map_or(0, |b| b.components)
    }

    pub fn rest_bounds(&self) -> Aabb {
        Aabb::from_points(&self.template_vertices)
    }

    /// Joint indices ordered so every parent precedes its children.
    pub fn topological_order(&self) -> Vec<usize> {
        topo_order(&self.parent)
    }
}

fn check_basis(what: &'static str, b: &BlendBasis, n: usize) -> Result<(), BodyError> {
    if b.data.len() != n * 3 * b.components {
        return Err(BodyError::DimensionMismatch {
            what,
            expected: n * 3 * b.components,
            actual: b.data.len(),
        });
    }
    if b.data.iter().any(|x| !x.is_finite()) {
        return Err(BodyError::NonFinite(what));
    }
    Ok(())
}

fn validate_tree(parent: &[Option<usize>], joints: usize) -> Result<(), BodyError> {
    if parent.len() != joints {
        return Err(BodyError::DimensionMismatch {
            what: "parent table",
            expected: joints,
            actual: parent.len(),
        });
    }
    let roots = parent.iter().filter(|p| p.is_none()).count();
    if roots != 1 {
        return Err(BodyError::InvalidTree(format!(
            "expected exactly one root, found {roots}"
        )));
    }
    for (j, p) in parent.iter().enumerate() {
        if let Some(p) = *p {
            if p >= joints {
                return Err(BodyError::InvalidTree(format!(
                    "joint {j} has parent {p} out of range"
                )));
            }
        }
    }
    // Walk up from every joint; a path longer than the joint count is a cycle.
    for start in 0..joints {
        let mut cur = start;
        let mut steps = 0;
        while let Some(p) = parent[cur] {
            cur = p;
            steps += 1;
            if steps > joints {
                return Err(BodyError::InvalidTree(format!(
                    "cycle through joint {start}"
                )));
            }
        }
    }
    Ok(())
}

fn topo_order(parent: &[Option<usize>]) -> Vec<usize> {
    let depth = |mut j: usize| {
        let mut d = 0;
        while let Some(p) = parent[j] {
            j = p;
            d += 1;
        }
        d
    };
    let mut order: Vec<usize> = (0..parent.len()).collect();
    order.sort_by_key(|&j| (depth(j), j));
    order
}

/// Skeletal pose: root translation plus one axis-angle rotation per joint,
/// each relative to its parent.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PoseParams {
    pub root_translation: [f64; 3],
    pub joint_rotations: Vec<[f64; 3]>,
}

impl PoseParams {
    pub fn zero(joints: usize) -> Self {
        Self {
            root_translation: [0.0; 3],
            joint_rotations: vec![[0.0; 3]; joints],
        }
    }

    pub fn joint_count(&self) -> usize {
        self.joint_rotations.len()
    }

    pub fn is_finite(&self) -> bool {
        self.root_translation.iter().all(|x| x.is_finite())
            && self.joint_rotations.iter().flatten().all(|x| x.is_finite())
    }

    /// Axis-angle components of every non-root joint, flattened.
    pub fn articulation(&self) -> Vec<f64> {
        self.joint_rotations.iter().skip(1).flatten().copied().collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ShapeParams {
    pub coefficients: Vec<f64>,
}

/// Vertices of a posed body. Faces and texel coordinates are shared with
/// the model they were posed from.
#[derive(Debug, Clone)]
pub struct PosedMesh {
    pub vertices: Vec<Vec3>,
    pub topology: Arc<SurfaceTopology>,
}

impl PosedMesh {
    pub fn face_count(&self) -> usize {
        self.topology.faces.len()
    }

    pub fn triangle(&self, face: usize) -> [Vec3; 3] {
        let [a, b, c] = self.topology.faces[face];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::from_points(&self.vertices)
    }

    /// Barycentric blend of the face's corner texels.
    pub fn texel(&self, face: usize, bary: [f64; 3]) -> [f64; 2] {
        let uv = &self.topology.uv_per_corner[face];
        [
            bary[0] * uv[0][0] + bary[1] * uv[1][0] + bary[2] * uv[2][0],
            bary[0] * uv[0][1] + bary[1] * uv[1][1] + bary[2] * uv[2][1],
        ]
    }
}

/// Rotation matrix for an axis-angle vector.
pub fn rodrigues(axis_angle: &Vec3) -> Mat3 {
    let theta2 = axis_angle.norm_squared();
    let k = skew(axis_angle);
    if theta2 < 1e-16 {
        // Second-order series; exact to machine precision at this size.
        return Mat3::identity() + k + k * k * 0.5;
    }
    let theta = theta2.sqrt();
    let a = theta.sin() / theta;
    let b = (1.0 - theta.cos()) / theta2;
    Mat3::identity() + k * a + k * k * b
}

fn rigid(rotation: &Mat3, translation: &Vec3) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(rotation);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(translation);
    m
}

/// World transforms of every joint. The translation column of each
/// transform is the posed joint position.
pub fn forward_kinematics(
    model: &SkinnedBodyModel,
    pose: &PoseParams,
) -> Result<Vec<Matrix4<f64>>, BodyError> {
    let j = model.joint_count();
    if pose.joint_count() != j {
        return Err(BodyError::DimensionMismatch {
            what: "pose joint rotations",
            expected: j,
            actual: pose.joint_count(),
        });
    }
    if !pose.is_finite() {
        return Err(BodyError::NonFinite("pose parameters"));
    }
    let rest = model.joints_rest();
    let root_t = Vec3::from(pose.root_translation);
    let mut world = vec![Matrix4::identity(); j];
    for ji in model.topological_order() {
        let r = rodrigues(&Vec3::from(pose.joint_rotations[ji]));
        world[ji] = match model.parents()[ji] {
            None => rigid(&r, &(rest[ji] + root_t)),
            Some(p) => world[p] * rigid(&r, &(rest[ji] - rest[p])),
        };
    }
    Ok(world)
}

/// Skinning transforms: joint world transform composed with the inverse of
/// the rest-pose joint placement.
pub fn skinning_transforms(
    model: &SkinnedBodyModel,
    pose: &PoseParams,
) -> Result<Vec<Matrix4<f64>>, BodyError> {
    forward_kinematics(model, pose)?;
    // Composed about each rest joint directly, so the zero pose yields exact identities.
    let rest = model.joints_rest();
    let root_t = Vec3::from(pose.root_translation);
    let mut out = vec![Matrix4::identity(); model.joint_count()];
    for ji in model.topological_order() {
        let r = rodrigues(&Vec3::from(pose.joint_rotations[ji]));
        let about = rest[ji] - r * rest[ji];
        out[ji] = match model.parents()[ji] {
            None => rigid(&r, &(about + root_t)),
            Some(p) => out[p] * rigid(&r, &about),
        };
    }
    Ok(out)
}

/// `R_j - I` for every non-root joint, flattened row-major.
pub fn pose_corrective_features(pose: &PoseParams) -> Vec<f64> {
    let mut out = Vec::with_capacity(9 * pose.joint_count().saturating_sub(1));
    for aa in pose.joint_rotations.iter().skip(1) {
        let r = rodrigues(&Vec3::from(*aa)) - Mat3::identity();
        for row in 0..3 {
            for col in 0..3 {
                out.push(r[(row, col)]);
            }
        }
    }
    out
}

/// Template plus shape and pose blend shapes, before skinning.
pub fn blended_template(
    model: &SkinnedBodyModel,
    pose: &PoseParams,
    shape: &ShapeParams,
) -> Result<Vec<Vec3>, BodyError> {
    if shape.coefficients.len() != model.shape_dim() {
        return Err(BodyError::DimensionMismatch {
            what: "shape coefficients",
            expected: model.shape_dim(),
            actual: shape.coefficients.len(),
        });
    }
    if shape.coefficients.iter().any(|c| !c.is_finite()) {
        return Err(BodyError::NonFinite("shape coefficients"));
    }
    let mut verts = model.template_vertices().to_vec();
    if let Some(b) = model.shape_dirs() {
        b.apply(&shape.coefficients, &mut verts);
    }
    if let Some(b) = model.pose_dirs() {
        b.apply(&pose_corrective_features(pose), &mut verts);
    }
    Ok(verts)
}

/// Poses the body with linear blend skinning.
pub fn pose_body(
    model: &SkinnedBodyModel,
    pose: &PoseParams,
    shape: &ShapeParams,
) -> Result<PosedMesh, BodyError> {
    let transforms = skinning_transforms(model, pose)?;
    let shaped = blended_template(model, pose, shape)?;
    let j = model.joint_count();
    let vertices = shaped
        .iter()
        .enumerate()
        .map(|(vi, v)| {
            let weights = &model.skinning_weights()[vi * j..(vi + 1) * j];
            // Displacement form: identity transforms leave the vertex bit-exact.
            let h = Vector4::new(v.x, v.y, v.z, 1.0);
            let mut d = Vec3::zeros();
            for (w, a) in weights.iter().zip(&transforms) {
                if *w != 0.0 {
                    let p = a * h;
                    d += (Vec3::new(p.x, p.y, p.z) - v) * *w;
                }
            }
            v + d
        })
        .collect();
    Ok(PosedMesh {
        vertices,
        topology: Arc::clone(model.topology()),
    })
}

/// Unposed mesh with the template vertices.
pub fn rest_mesh(model: &SkinnedBodyModel) -> PosedMesh {
    PosedMesh {
        vertices: model.template_vertices().to_vec(),
        topology: Arc::clone(model.topology()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn chain_model() -> SkinnedBodyModel {
        // Two joints along +x; one triangle near each.
        let verts = vec![
            Vec3::new(0.2, 0.0, 0.0),
            Vec3::new(0.3, 0.1, 0.0),
            Vec3::new(0.3, 0.0, 0.1),
            Vec3::new(1.2, 0.0, 0.0),
            Vec3::new(1.3, 0.1, 0.0),
            Vec3::new(1.3, 0.0, 0.1),
        ];
        let faces = vec![[0, 1, 2], [3, 4, 5]];
        let uv = vec![[[0.0, 0.0], [0.5, 0.0], [0.0, 0.5]]; 2];
        let weights = vec![1.0, 0.0, 1.0, 0.0, 0.7, 0.3, 0.0, 1.0, 0.0, 1.0, 0.2, 0.8];
        SkinnedBodyModel::new(
            verts,
            faces,
            uv,
            weights,
            vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0)],
            vec![None, Some(0)],
            None,
            None,
        )
        .unwrap()
    }

    fn assert_mat_close(a: &Mat3, b: &Mat3, tol: f64) {
        assert!((a - b).abs().max() <= tol, "{a} vs {b}");
    }

    #[test]
    fn rodrigues_zero_is_identity() {
        assert_eq!(rodrigues(&Vec3::zeros()), Mat3::identity());
    }

    #[test]
    fn rodrigues_quarter_turn_about_z() {
        let r = rodrigues(&Vec3::new(0.0, 0.0, FRAC_PI_2));
        let p = r * Vec3::new(1.0, 0.0, 0.0);
        assert!((p - Vec3::new(0.0, 1.0, 0.0)).norm() <= 1e-9);
    }

    proptest! {
        #[test]
        fn rodrigues_inverse_and_so3(x in -7.0..7.0f64, y in -7.0..7.0f64, z in -7.0..7.0f64) {
            let v = Vec3::new(x, y, z);
            let r = rodrigues(&v);
            assert_mat_close(&(r * rodrigues(&-v)), &Mat3::identity(), 1e-9);
            assert_mat_close(&(r.transpose() * r), &Mat3::identity(), 1e-9);
            prop_assert!((r.determinant() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn rodrigues_in_so3_for_1000_random_inputs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let v = Vec3::new(
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-10.0..10.0),
            );
            let r = rodrigues(&v);
            assert_mat_close(&(r.transpose() * r), &Mat3::identity(), 1e-9);
            assert!((r.determinant() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn fk_rest_pose_places_joints_at_rest() {
        let m = chain_model();
        let g = forward_kinematics(&m, &PoseParams::zero(2)).unwrap();
        for (gi, jr) in g.iter().zip(m.joints_rest()) {
            assert_eq!(Vec3::new(gi[(0, 3)], gi[(1, 3)], gi[(2, 3)]), *jr);
        }
    }

    #[test]
    fn fk_translation_shifts_every_joint() {
        let m = chain_model();
        let mut pose = PoseParams::zero(2);
        pose.root_translation = [0.5, -1.0, 2.0];
        let g = forward_kinematics(&m, &pose).unwrap();
        for (gi, jr) in g.iter().zip(m.joints_rest()) {
            let p = Vec3::new(gi[(0, 3)], gi[(1, 3)], gi[(2, 3)]);
            assert!((p - jr - Vec3::new(0.5, -1.0, 2.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn fk_two_joint_chain_bend() {
        // Three joints on a line; bending joint 1 by 90 degrees about z
        // swings joint 2 from (2,0,0) to (1,1,0).
        let verts = vec![Vec3::zeros(), Vec3::new(0.1, 0.0, 0.0), Vec3::new(0.0, 0.1, 0.0)];
        let m = SkinnedBodyModel::new(
            verts,
            vec![[0, 1, 2]],
            vec![[[0.0, 0.0]; 3]],
            vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0],
            vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), Vec3::new(2.0, 0.0, 0.0)],
            vec![None, Some(0), Some(1)],
            None,
            None,
        )
        .unwrap();
        let mut pose = PoseParams::zero(3);
        pose.joint_rotations[1] = [0.0, 0.0, FRAC_PI_2];
        let g = forward_kinematics(&m, &pose).unwrap();
        let child = Vec3::new(g[2][(0, 3)], g[2][(1, 3)], g[2][(2, 3)]);
        assert!((child - Vec3::new(1.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn fk_rejects_wrong_joint_count() {
        let m = chain_model();
        assert!(matches!(
            forward_kinematics(&m, &PoseParams::zero(3)),
            Err(BodyError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn zero_pose_reproduces_template_exactly() {
        let m = chain_model();
        let posed = pose_body(&m, &PoseParams::zero(2), &ShapeParams::default()).unwrap();
        assert_eq!(posed.vertices, m.template_vertices());
    }

    #[test]
    fn bend_matches_per_vertex_weighted_transform() {
        let m = chain_model();
        let mut pose = PoseParams::zero(2);
        pose.joint_rotations[1] = [0.3, -0.2, 0.9];
        let posed = pose_body(&m, &pose, &ShapeParams::default()).unwrap();
        // Joint 0 is identity; joint 1 rotates about (1,0,0).
        let r = rodrigues(&Vec3::new(0.3, -0.2, 0.9));
        let pivot = Vec3::new(1.0, 0.0, 0.0);
        for (vi, v) in m.template_vertices().iter().enumerate() {
            let w = m.vertex_weights(vi);
            let expected = *v * w[0] + (r * (v - pivot) + pivot) * w[1];
            assert!((posed.vertices[vi] - expected).norm() < 1e-12);
        }
    }

    #[test]
    fn invalid_tree_is_rejected() {
        assert!(validate_tree(&[Some(1), Some(0)], 2).is_err());
        assert!(validate_tree(&[None, None], 2).is_err());
        assert!(validate_tree(&[None, Some(2), Some(1)], 3).is_err());
        assert!(validate_tree(&[None, Some(0), Some(1)], 3).is_ok());
    }

    #[test]
    fn shape_and_pose_bases_are_zero_at_zero_parameters() {
        let m = chain_model();
        let n = m.vertex_count();
        let mut shape = BlendBasis::zeros(n, 2);
        shape.data.iter_mut().enumerate().for_each(|(i, x)| *x = (i as f64).sin());
        let mut pose = BlendBasis::zeros(n, 9);
        pose.data.iter_mut().enumerate().for_each(|(i, x)| *x = (i as f64).cos());
        let m2 = SkinnedBodyModel::new(
            m.template_vertices().to_vec(),
            m.faces().to_vec(),
            m.uv_per_corner().to_vec(),
            m.skinning_weights().to_vec(),
            m.joints_rest().to_vec(),
            m.parents().to_vec(),
            Some(shape),
            Some(pose),
        )
        .unwrap();
        let posed = pose_body(
            &m2,
            &PoseParams::zero(2),
            &ShapeParams {
                coefficients: vec![0.0, 0.0],
            },
        )
        .unwrap();
        assert_eq!(posed.vertices, m.template_vertices());
        let shaped = pose_body(
            &m2,
            &PoseParams::zero(2),
            &ShapeParams {
                coefficients: vec![1.0, 0.0],
            },
        )
        .unwrap();
        assert_ne!(shaped.vertices, m.template_vertices());
    }
}
