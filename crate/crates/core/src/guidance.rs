//! Needle-guide ray modelling and first-contact prediction against a mesh.
//!
//! The guide axis is a ray `r(t) = o + t·d, t ≥ 0`. The predicted contact is
//! the intersection with the smallest positive `t`; when nothing is hit the
//! result says so and callers must draw nothing.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::TriangleMesh;
use crate::transform::{FrameId, GraphError, Point3, RigidTransform, TransformGraph, Vec3};

/// Determinant and barycentric tolerance of the triangle test.
pub const EPS: f64 = 1e-9;
/// Hits closer than this (mm) are ignored so a ray starting on a surface
/// does not report that surface.
pub const T_FLOOR: f64 = 1e-6;
/// Hits whose parameters differ by less than this are ties.
pub const TIE_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GuidanceError {
    #[error("ray direction must be finite and non-zero")]
    BadDirection,
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ray {
    pub origin: Point3,
    direction: Vec3,
    pub frame: FrameId,
}

impl Ray {
    /// Normalizes `direction`.
    pub fn new(origin: Point3, direction: Vec3, frame: FrameId) -> Result<Self, GuidanceError> {
        let n = direction.norm();
        if !n.is_finite() || n < 1e-12 || !origin.iter().all(|c| c.is_finite()) {
            return Err(GuidanceError::BadDirection);
        }
        Ok(Self {
            origin,
            direction: direction / n,
            frame,
        })
    }

    pub fn direction(&self) -> &Vec3 {
        &self.direction
    }

    pub fn at(&self, t: f64) -> Point3 {
        self.origin + self.direction * t
    }

    /// Re-expresses the ray through `target_t_frame`.
    pub fn transformed(&self, target_t_frame: &RigidTransform, target: FrameId) -> Ray {
        Ray {
            origin: target_t_frame.apply_point(&self.origin),
            direction: target_t_frame.apply_vector(&self.direction).normalize(),
            frame: target,
        }
    }
}

/// Ray parameter and barycentric coordinates of a triangle hit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TriangleHit {
    pub t: f64,
    pub u: f64,
    pub v: f64,
}

/// Möller–Trumbore test. Accepts the closed triangle (barycentrics within
/// `eps` of the boundary) and only `t > eps`; near-parallel rays miss.
pub fn intersect_triangle(
    origin: &Point3,
    dir: &Vec3,
    v0: &Point3,
    v1: &Point3,
    v2: &Point3,
    eps: f64,
) -> Option<TriangleHit> {
    let e1 = v1 - v0;
    let e2 = v2 - v0;
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < eps {
        return None;
    }
    let inv_det = 1.0 / det;
    let s = origin - v0;
    let u = s.dot(&p) * inv_det;
    if u < -eps || u > 1.0 + eps {
        return None;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv_det;
    if v < -eps || u + v > 1.0 + eps {
        return None;
    }
    let t = e2.dot(&q) * inv_det;
    (t > eps).then_some(TriangleHit { t, u, v })
}

/// Outcome of a guidance query. Serializes as `{"hit":false}` on a miss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HitResult {
    pub hit: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub t_star: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub point: Option<Point3>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub triangle_index: Option<usize>,
}

impl HitResult {
    pub fn miss() -> Self {
        Self {
            hit: false,
            t_star: None,
            point: None,
            triangle_index: None,
        }
    }

    fn found(ray: &Ray, t: f64, triangle: usize) -> Self {
        Self {
            hit: true,
            t_star: Some(t),
            point: Some(ray.at(t)),
            triangle_index: Some(triangle),
        }
    }
}

/// Running minimum with the tie rule: smallest `t`, then the lowest triangle
/// index among hits within `TIE_TOL` of that minimum.
struct Closest {
    best_t: f64,
    near: Vec<(f64, usize)>,
}

impl Closest {
    fn new() -> Self {
        Self {
            best_t: f64::INFINITY,
            near: Vec::new(),
        }
    }

    fn offer(&mut self, t: f64, tri: usize) {
        if t <= self.best_t + TIE_TOL {
            self.near.push((t, tri));
            self.best_t = self.best_t.min(t);
        }
    }

    fn finish(self) -> Option<(f64, usize)> {
        let best_t = self.best_t;
        self.near
            .into_iter()
            .filter(|&(t, _)| t <= best_t + TIE_TOL)
            .min_by_key(|&(_, i)| i)
            .map(|(_, i)| (best_t, i))
    }
}

fn test_triangle(ray: &Ray, mesh: &TriangleMesh, tri: usize) -> Option<f64> {
    let [a, b, c] = mesh.corners(tri);
    intersect_triangle(&ray.origin, &ray.direction, &a, &b, &c, EPS)
        .map(|h| h.t)
        .filter(|&t| t > T_FLOOR)
}

fn finish(ray: &Ray, closest: Closest, mesh: &TriangleMesh) -> HitResult {
    match closest.finish() {
        // Report the t of the chosen triangle itself so point = o + t·d holds for it.
        Some((_, tri)) => HitResult::found(ray, test_triangle(ray, mesh, tri).expect("candidate hit"), tri),
        None => HitResult::miss(),
    }
}

/// First hit of a ray already expressed in the mesh frame, via the hierarchy.
pub fn raycast_local(ray: &Ray, mesh: &TriangleMesh) -> HitResult {
    let mut closest = Closest::new();
    let mut cutoff = f64::INFINITY;
    mesh.bvh()
        .traverse(&ray.origin, &ray.direction, 0.0, &mut cutoff, |tri, cutoff| {
            if let Some(t) = test_triangle(ray, mesh, tri) {
                closest.offer(t, tri);
                *cutoff = closest.best_t + TIE_TOL;
            }
        });
    finish(ray, closest, mesh)
}

/// Same contract as [`raycast_local`] by testing every triangle.
pub fn raycast_exhaustive(ray: &Ray, mesh: &TriangleMesh) -> HitResult {
    let mut closest = Closest::new();
    for tri in 0..mesh.len() {
        if let Some(t) = test_triangle(ray, mesh, tri) {
            closest.offer(t, tri);
        }
    }
    finish(ray, closest, mesh)
}

/// Expresses the ray in the mesh frame through `graph` and finds the first hit.
/// The hit point is reported in the mesh frame.
pub fn raycast(ray: &Ray, mesh: &TriangleMesh, graph: &TransformGraph) -> Result<HitResult, GuidanceError> {
    let mesh_t_ray = graph.query(mesh.frame(), ray.frame)?;
    Ok(raycast_local(&ray.transformed(&mesh_t_ray, mesh.frame()), mesh))
}

/// Needle-guide ray fixed in the end-effector frame, expressed in the robot
/// base frame for the current pose.
pub fn guide_ray_in_base(origin_e: &Point3, dir_e: &Vec3, graph: &TransformGraph) -> Result<Ray, GuidanceError> {
    let base_t_ee = graph.query(FrameId::RobotBase, FrameId::EndEffector)?;
    Ray::new(*origin_e, *dir_e, FrameId::EndEffector).map(|r| r.transformed(&base_t_ee, FrameId::RobotBase))
}

/// Predicted needle contact on the spine for the current robot pose.
pub fn predict_hit(
    needle_origin_e: &Point3,
    needle_dir_e: &Vec3,
    graph: &TransformGraph,
    spine: &TriangleMesh,
) -> Result<HitResult, GuidanceError> {
    let ray = guide_ray_in_base(needle_origin_e, needle_dir_e, graph)?;
    raycast(&ray, spine, graph)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transform::testutil::random_transform;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn p(x: f64, y: f64, z: f64) -> Point3 {
        Point3::new(x, y, z)
    }

    fn tri() -> [Point3; 3] {
        [p(-1.0, -1.0, 0.0), p(1.0, -1.0, 0.0), p(0.0, 1.0, 0.0)]
    }

    /// Plane intersection followed by a same-side containment test.
    fn plane_clip_oracle(o: &Point3, d: &Vec3, tri: &[Point3; 3]) -> Option<f64> {
        let n = (tri[1] - tri[0]).cross(&(tri[2] - tri[0]));
        let denom = n.dot(d);
        if denom == 0.0 {
            return None;
        }
        let t = n.dot(&(tri[0] - o)) / denom;
        if t <= 0.0 {
            return None;
        }
        let x = o + d * t;
        let inside = (0..3).all(|k| {
            let a = tri[k];
            let b = tri[(k + 1) % 3];
            (b - a).cross(&(x - a)).dot(&n) >= 0.0
        });
        inside.then_some(t)
    }

    #[test]
    fn axis_ray_hits_at_unit_distance() {
        let [a, b, c] = tri();
        let h = intersect_triangle(&p(0.0, 0.0, -1.0), &Vec3::z(), &a, &b, &c, EPS).unwrap();
        assert!((h.t - 1.0).abs() < 1e-15);
        assert!(intersect_triangle(&p(0.0, 0.0, -1.0), &-Vec3::z(), &a, &b, &c, EPS).is_none());
    }

    #[test]
    fn parallel_ray_misses() {
        let [a, b, c] = tri();
        assert!(intersect_triangle(&p(-5.0, 0.0, 0.0), &Vec3::x(), &a, &b, &c, EPS).is_none());
    }

    #[test]
    fn matches_plane_clip_oracle_outside_boundary_band() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut compared = 0;
        for _ in 0..100_000 {
            let mut rp = || {
                p(
                    rng.random_range(-10.0..10.0),
                    rng.random_range(-10.0..10.0),
                    rng.random_range(-10.0..10.0),
                )
            };
            let t3 = [rp(), rp(), rp()];
            let o = rp();
            let d = (rp() - Point3::origin()).normalize();
            let mt = intersect_triangle(&o, &d, &t3[0], &t3[1], &t3[2], EPS);
            // Skip rays that graze an edge or the plane: the band where the
            // two tests may legitimately disagree.
            let n = (t3[1] - t3[0]).cross(&(t3[2] - t3[0]));
            if (n.normalize().dot(&d)).abs() < 1e-6 {
                continue;
            }
            let oracle = plane_clip_oracle(&o, &d, &t3);
            if let Some(t) = oracle {
                let x = o + d * t;
                let near_edge = (0..3).any(|k| {
                    let a = t3[k];
                    let b = t3[(k + 1) % 3];
                    let e = b - a;
                    (x - a).cross(&e).norm() / e.norm() < 1e-6
                });
                if near_edge || t < 1e-6 {
                    continue;
                }
            }
            compared += 1;
            match (mt, oracle) {
                (Some(h), Some(t)) => assert!((h.t - t).abs() < 1e-7, "{} vs {}", h.t, t),
                (None, None) => {}
                (a, b) => panic!("decision mismatch: {a:?} vs {b:?}"),
            }
        }
        assert!(compared > 90_000);
    }

    fn two_planes() -> TriangleMesh {
        let verts = vec![
            p(-1.0, -1.0, 1.0),
            p(1.0, -1.0, 1.0),
            p(0.0, 1.0, 1.0),
            p(-1.0, -1.0, 2.0),
            p(1.0, -1.0, 2.0),
            p(0.0, 1.0, 2.0),
        ];
        // far plane listed first so index order differs from depth order
        TriangleMesh::new(verts, vec![[3, 4, 5], [0, 1, 2]], FrameId::Spine)
            .unwrap()
            .0
    }

    fn cube() -> TriangleMesh {
        let v: Vec<Point3> = (0..8)
            .map(|i| {
                p(
                    (i & 1) as f64 * 2.0 - 1.0,
                    ((i >> 1) & 1) as f64 * 2.0 - 1.0,
                    ((i >> 2) & 1) as f64 * 2.0 - 1.0,
                )
            })
            .collect();
        let quads = [
            [0, 1, 3, 2],
            [4, 6, 7, 5],
            [0, 4, 5, 1],
            [2, 3, 7, 6],
            [0, 2, 6, 4],
            [1, 5, 7, 3],
        ];
        let tris = quads
            .iter()
            .flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]])
            .collect();
        TriangleMesh::new(v, tris, FrameId::Spine).unwrap().0
    }

    #[test]
    fn nearest_of_stacked_planes_wins() {
        let mesh = two_planes();
        let ray = Ray::new(Point3::origin(), Vec3::z(), FrameId::Spine).unwrap();
        let h = raycast_local(&ray, &mesh);
        assert_eq!(h.triangle_index, Some(1));
        assert!((h.point.unwrap().z - 1.0).abs() < 1e-12);
        assert_eq!(h, raycast_exhaustive(&ray, &mesh));
    }

    #[test]
    fn origin_inside_cube_hits_exit_face() {
        let mesh = cube();
        let ray = Ray::new(Point3::origin(), Vec3::x(), FrameId::Spine).unwrap();
        let h = raycast_local(&ray, &mesh);
        assert!(h.hit);
        assert!((h.t_star.unwrap() - 1.0).abs() < 1e-12);
        assert!((h.point.unwrap().x - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ray_away_from_mesh_misses() {
        let mesh = cube();
        let ray = Ray::new(p(0.0, 0.0, 5.0), Vec3::z(), FrameId::Spine).unwrap();
        let h = raycast_local(&ray, &mesh);
        assert_eq!(h, HitResult::miss());
        assert_eq!(serde_json::to_string(&h).unwrap(), r#"{"hit":false}"#);
    }

    #[test]
    fn coincident_triangles_tie_to_lowest_index() {
        let verts = vec![p(-1.0, -1.0, 1.0), p(1.0, -1.0, 1.0), p(0.0, 1.0, 1.0)];
        let mesh = TriangleMesh::new(verts, vec![[0, 1, 2], [1, 2, 0], [2, 0, 1]], FrameId::Spine)
            .unwrap()
            .0;
        let ray = Ray::new(Point3::origin(), Vec3::z(), FrameId::Spine).unwrap();
        assert_eq!(raycast_local(&ray, &mesh).triangle_index, Some(0));
    }

    #[test]
    fn surface_origin_never_reports_non_positive_t() {
        let mesh = cube();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..2000 {
            let tri = rng.random_range(0..mesh.len());
            let [a, b, c] = mesh.corners(tri);
            let (u, v): (f64, f64) = (rng.random(), rng.random());
            let (u, v) = if u + v > 1.0 { (1.0 - u, 1.0 - v) } else { (u, v) };
            let o = a + (b - a) * u + (c - a) * v;
            let d = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let Ok(ray) = Ray::new(o, d, FrameId::Spine) else {
                continue;
            };
            let h = raycast_local(&ray, &mesh);
            if let Some(t) = h.t_star {
                assert!(t > T_FLOOR);
                assert!((h.point.unwrap() - ray.at(t)).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn raycast_through_graph_is_frame_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mesh = cube();
        for _ in 0..200 {
            let x = random_transform(&mut rng, 300.0);
            let mut g = TransformGraph::new();
            g.insert(FrameId::RobotBase, FrameId::Spine, x, 0).unwrap();
            let o = p(
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
            );
            let d = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let local = Ray::new(o, d, FrameId::Spine).unwrap();
            let moved = local.transformed(&x, FrameId::RobotBase);
            let a = raycast_local(&local, &mesh);
            let b = raycast(&moved, &mesh, &g).unwrap();
            assert_eq!(a.hit, b.hit);
            if a.hit {
                assert!((a.t_star.unwrap() - b.t_star.unwrap()).abs() < 1e-6);
                assert!((a.point.unwrap() - b.point.unwrap()).norm() < 1e-6);
            }
        }
    }

    #[test]
    fn missing_frame_link_is_an_error() {
        let ray = Ray::new(Point3::origin(), Vec3::z(), FrameId::RobotBase).unwrap();
        let err = raycast(&ray, &cube(), &TransformGraph::new()).unwrap_err();
        assert!(matches!(err, GuidanceError::Graph(GraphError::NoPath { .. })));
    }

    #[test]
    fn guide_aimed_at_vertex_hits_it() {
        let mesh = cube();
        // guide along +z of the end-effector; pose the end-effector 10 mm
        // below the corner (1,1,-1) of the cube
        let target = p(0.3, 0.4, -1.0);
        let base_t_ee = RigidTransform::from_translation(target - Vec3::z() * 10.0 - Point3::origin());
        let mut g = TransformGraph::new();
        g.insert(FrameId::RobotBase, FrameId::EndEffector, base_t_ee, 0)
            .unwrap();
        g.insert(FrameId::RobotBase, FrameId::Spine, RigidTransform::identity(), 0)
            .unwrap();
        let h = predict_hit(&Point3::origin(), &Vec3::z(), &g, &mesh).unwrap();
        assert!((h.point.unwrap() - target).norm() < 1e-6);
        let away = predict_hit(&Point3::origin(), &-Vec3::z(), &g, &mesh).unwrap();
        assert!(!away.hit);
    }
}
