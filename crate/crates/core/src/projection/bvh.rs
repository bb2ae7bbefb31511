use super::{NearestAccumulator, ProjectionError, ProjectionResult};
use crate::body::PosedMesh;
use crate::geometry::{Aabb, Vec3};

pub const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Leaf { first: u32, count: u32 },
    Inner { left: u32, right: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BvhNode {
    pub bounds: Aabb,
    pub kind: NodeKind,
}

/// Binary bounding-volume hierarchy over a mesh's triangles. Built with
/// median splits on the longest axis; leaves hold at most [`LEAF_SIZE`]
/// triangles.
#[derive(Debug, Clone)]
pub struct TriangleBvh {
    nodes: Vec<BvhNode>,
    triangles: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub t: f64,
    pub face: usize,
    pub bary: [f64; 3],
}

impl TriangleBvh {
    pub fn build(mesh: &PosedMesh) -> Result<Self, ProjectionError> {
        let n = mesh.face_count();
        if n == 0 {
            return Err(ProjectionError::EmptyMesh);
        }
        let boxes: Vec<Aabb> = (0..n)
            .map(|f| Aabb::from_points(&mesh.triangle(f)))
            .collect();
        let centroids: Vec<Vec3> = boxes.iter().map(|b| b.center()).collect();
        let mut bvh = Self {
            nodes: Vec::with_capacity(2 * n.div_ceil(LEAF_SIZE)),
            triangles: (0..n as u32).collect(),
        };
        bvh.build_node(0, n, &boxes, &centroids);
        Ok(bvh)
    }

    fn build_node(&mut self, start: usize, end: usize, boxes: &[Aabb], centroids: &[Vec3]) -> u32 {
        let mut bounds = Aabb::empty();
        for &t in &self.triangles[start..end] {
            bounds = bounds.union(&boxes[t as usize]);
        }
        let id = self.nodes.len() as u32;
        let count = end - start;
        if count <= LEAF_SIZE {
            self.nodes.push(BvhNode {
                bounds,
                kind: NodeKind::Leaf {
                    first: start as u32,
                    count: count as u32,
                },
            });
            return id;
        }
        let axis = bounds.longest_axis();
        let mid = count / 2;
        self.triangles[start..end].select_nth_unstable_by(mid, |a, b| {
            centroids[*a as usize][axis]
                .total_cmp(&centroids[*b as usize][axis])
                .then(a.cmp(b))
        });
        self.nodes.push(BvhNode {
            bounds,
            kind: NodeKind::Leaf { first: 0, count: 0 },
        });
        let left = self.build_node(start, start + mid, boxes, centroids);
        let right = self.build_node(start + mid, end, boxes, centroids);
        self.nodes[id as usize].kind = NodeKind::Inner { left, right };
        id
    }

    pub fn nodes(&self) -> &[BvhNode] {
        &self.nodes
    }

    pub fn root(&self) -> &BvhNode {
        &self.nodes[0]
    }

    pub fn leaf_triangles(&self, node: &BvhNode) -> &[u32] {
        match node.kind {
            NodeKind::Leaf { first, count } => {
                &self.triangles[first as usize..(first + count) as usize]
            }
            NodeKind::Inner { .. } => &[],
        }
    }

    pub fn depth(&self) -> usize {
        fn rec(bvh: &TriangleBvh, i: u32) -> usize {
            match bvh.nodes[i as usize].kind {
                NodeKind::Leaf { .. } => 1,
                NodeKind::Inner { left, right } => 1 + rec(bvh, left).max(rec(bvh, right)),
            }
        }
        rec(self, 0)
    }

    pub(crate) fn nearest(
        &self,
        mesh: &PosedMesh,
        x: &Vec3,
        max_distance: f64,
    ) -> Option<ProjectionResult> {
        let mut acc = NearestAccumulator::new(max_distance);
        let mut stack: Vec<(f64, u32)> = Vec::with_capacity(64);
        stack.push((self.nodes[0].bounds.distance_squared(x), 0));
        while let Some((d2, id)) = stack.pop() {
            let r = acc.radius();
            if d2 > r * r {
                continue;
            }
            let node = &self.nodes[id as usize];
            match node.kind {
                NodeKind::Leaf { first, count } => {
                    for &t in &self.triangles[first as usize..(first + count) as usize] {
                        acc.offer(mesh, t as usize, x);
                    }
                }
                NodeKind::Inner { left, right } => {
                    let dl = self.nodes[left as usize].bounds.distance_squared(x);
                    let dr = self.nodes[right as usize].bounds.distance_squared(x);
                    // Nearer child is popped first.
                    if dl <= dr {
                        stack.push((dr, right));
                        stack.push((dl, left));
                    } else {
                        stack.push((dl, left));
                        stack.push((dr, right));
                    }
                }
            }
        }
        acc.finish(mesh)
    }

    /// Nearest ray-triangle intersection with `t` in `(t_min, t_max)`.
    /// Ties on `t` resolve to the lowest face index.
    pub fn intersect_ray(
        &self,
        mesh: &PosedMesh,
        origin: &Vec3,
        dir: &Vec3,
        t_min: f64,
        t_max: f64,
    ) -> Option<RayHit> {
        let mut best: Option<RayHit> = None;
        let mut stack = vec![0u32];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id as usize];
            let limit = best.map_or(t_max, |h| h.t);
            match node.bounds.ray_interval(origin, dir) {
                Some((a, b)) if b >= t_min && a <= limit => {}
                _ => continue,
            }
            match node.kind {
                NodeKind::Leaf { first, count } => {
                    for &t in &self.triangles[first as usize..(first + count) as usize] {
                        let face = t as usize;
                        let [a, b, c] = mesh.triangle(face);
                        if let Some((th, bary)) = ray_triangle(origin, dir, &a, &b, &c) {
                            if th <= t_min || th >= t_max {
                                continue;
                            }
                            let better = match best {
                                None => true,
                                Some(h) => th < h.t || (th == h.t && face < h.face),
                            };
                            if better {
                                best = Some(RayHit { t: th, face, bary });
                            }
                        }
                    }
                }
                NodeKind::Inner { left, right } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        best
    }
}

/// Möller–Trumbore. Two-sided.
fn ray_triangle(o: &Vec3, d: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Option<(f64, [f64; 3])> {
    let e1 = b - a;
    let e2 = c - a;
    let p = d.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv = 1.0 / det;
    let s = o - a;
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = d.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&q) * inv;
    Some((t, [1.0 - u - v, u, v]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::{generate_toy_body, pose_body, PoseParams, ShapeParams, ToyBodySpec};
    use crate::projection::{brute_force_closest, closest_point, closest_point_within, TIE_WINDOW};
    use crate::projection::tests::single_triangle;
    use rand::{Rng, SeedableRng};

    fn toy_mesh() -> PosedMesh {
        let body = generate_toy_body(&ToyBodySpec::default()).unwrap();
        let mut pose = PoseParams::zero(body.joint_count());
        pose.joint_rotations[4] = [0.9, 0.0, 0.0];
        pose.joint_rotations[8] = [-0.7, 0.1, 0.0];
        pose_body(&body, &pose, &ShapeParams::default()).unwrap()
    }

    #[test]
    fn single_triangle_is_one_leaf() {
        let mesh = single_triangle();
        let bvh = TriangleBvh::build(&mesh).unwrap();
        assert_eq!(bvh.nodes().len(), 1);
        assert_eq!(bvh.root().bounds, Aabb::from_points(&mesh.vertices));
        assert_eq!(bvh.leaf_triangles(bvh.root()), &[0]);
    }

    #[test]
    fn empty_mesh_is_rejected() {
        let mut mesh = single_triangle();
        mesh.topology = std::sync::Arc::new(crate::body::SurfaceTopology {
            faces: vec![],
            uv_per_corner: vec![],
        });
        assert_eq!(TriangleBvh::build(&mesh).unwrap_err(), ProjectionError::EmptyMesh);
    }

    #[test]
    fn leaves_partition_triangles_and_boxes_nest() {
        let mesh = toy_mesh();
        let bvh = TriangleBvh::build(&mesh).unwrap();
        let mut seen = vec![0usize; mesh.face_count()];
        for node in bvh.nodes() {
            match node.kind {
                NodeKind::Leaf { count, .. } => {
                    assert!(count as usize <= LEAF_SIZE);
                    for &t in bvh.leaf_triangles(node) {
                        seen[t as usize] += 1;
                        assert!(node.bounds.contains_box(&Aabb::from_points(&mesh.triangle(t as usize))));
                    }
                }
                NodeKind::Inner { left, right } => {
                    assert!(node.bounds.contains_box(&bvh.nodes()[left as usize].bounds));
                    assert!(node.bounds.contains_box(&bvh.nodes()[right as usize].bounds));
                }
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
        let n = mesh.face_count() as f64;
        assert!(bvh.depth() <= (n / LEAF_SIZE as f64).log2().ceil() as usize + 2);
    }

    #[test]
    fn bvh_matches_brute_force() {
        let mesh = toy_mesh();
        let bvh = TriangleBvh::build(&mesh).unwrap();
        let bounds = mesh.bounds().dilated(0.2);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let x = Vec3::new(
                rng.gen_range(bounds.min.x..bounds.max.x),
                rng.gen_range(bounds.min.y..bounds.max.y),
                rng.gen_range(bounds.min.z..bounds.max.z),
            );
            let fast = closest_point(&bvh, &mesh, &x);
            let slow = brute_force_closest(&mesh, &x);
            assert!((fast.l - slow.l).abs() <= TIE_WINDOW);
            assert_eq!(fast.face, slow.face);
            assert_eq!(fast, slow);
        }
    }

    #[test]
    fn bounded_query_agrees_when_within_limit() {
        let mesh = toy_mesh();
        let bvh = TriangleBvh::build(&mesh).unwrap();
        let bounds = mesh.bounds().dilated(0.2);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        for _ in 0..1000 {
            let x = Vec3::new(
                rng.gen_range(bounds.min.x..bounds.max.x),
                rng.gen_range(bounds.min.y..bounds.max.y),
                rng.gen_range(bounds.min.z..bounds.max.z),
            );
            let full = closest_point(&bvh, &mesh, &x);
            match closest_point_within(&bvh, &mesh, &x, 0.1) {
                Some(r) => assert_eq!(r, full),
                None => assert!(full.l >= 0.1),
            }
        }
    }

    #[test]
    fn surface_points_project_to_themselves() {
        let mesh = toy_mesh();
        let bvh = TriangleBvh::build(&mesh).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for _ in 0..500 {
            let f = rng.gen_range(0..mesh.face_count());
            let (s, t): (f64, f64) = (rng.gen(), rng.gen());
            let (s, t) = if s + t > 1.0 { (1.0 - s, 1.0 - t) } else { (s, t) };
            let [a, b, c] = mesh.triangle(f);
            let x = a * (1.0 - s - t) + b * s + c * t;
            assert!(closest_point(&bvh, &mesh, &x).l <= 1e-6);
        }
    }

    #[test]
    fn ray_hits_nearest_triangle() {
        let mesh = toy_mesh();
        let bvh = TriangleBvh::build(&mesh).unwrap();
        let o = Vec3::new(0.0, -3.0, 1.2);
        let d = Vec3::new(0.0, 1.0, 0.0);
        let hit = bvh.intersect_ray(&mesh, &o, &d, 0.0, f64::INFINITY).unwrap();
        // Torso front surface at y = -0.14.
        assert!((hit.t - (3.0 - 0.14)).abs() < 5e-3, "{}", hit.t);
        let mut best = f64::INFINITY;
        for f in 0..mesh.face_count() {
            let [a, b, c] = mesh.triangle(f);
            if let Some((t, _)) = ray_triangle(&o, &d, &a, &b, &c) {
                if t > 0.0 {
                    best = best.min(t);
                }
            }
        }
        assert_eq!(hit.t, best);
        assert!(bvh
            .intersect_ray(&mesh, &o, &Vec3::new(0.0, -1.0, 0.0), 0.0, f64::INFINITY)
            .is_none());
    }
}
