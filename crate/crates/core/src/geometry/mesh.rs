use std::collections::HashMap;

use serde::Serialize;
use thiserror::Error;

use crate::transform::{FrameId, Point3, RigidTransform, Vec3};

use super::{Aabb, Bvh};

/// Triangles with area below this (mm²) are dropped at load time.
pub const MIN_TRIANGLE_AREA: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("triangle {triangle} references vertex {index} but only {count} vertices exist")]
    IndexOutOfRange { triangle: usize, index: u32, count: usize },
    #[error("vertex {0} is not finite")]
    NonFinite(usize),
    #[error("mesh has no triangles")]
    Empty,
}

/// What load-time cleaning removed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct CleanReport {
    pub input_triangles: usize,
    pub dropped_degenerate: usize,
    pub merged_vertices: usize,
}

/// Indexed triangle mesh in mm with its hierarchy. Immutable once built; poses
/// change through transforms, never by rewriting vertices.
#[derive(Clone, Debug)]
pub struct TriangleMesh {
    vertices: Vec<Point3>,
    triangles: Vec<[u32; 3]>,
    frame: FrameId,
    bvh: Bvh,
}

impl TriangleMesh {
    /// Validates indices, drops degenerate triangles and builds the hierarchy.
    pub fn new(
        vertices: Vec<Point3>,
        triangles: Vec<[u32; 3]>,
        frame: FrameId,
    ) -> Result<(Self, CleanReport), MeshError> {
        if let Some(i) = vertices.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(MeshError::NonFinite(i));
        }
        for (t, tri) in triangles.iter().enumerate() {
            if let Some(&bad) = tri.iter().find(|&&i| i as usize >= vertices.len()) {
                return Err(MeshError::IndexOutOfRange {
                    triangle: t,
                    index: bad,
                    count: vertices.len(),
                });
            }
        }
        let input = triangles.len();
        let triangles: Vec<[u32; 3]> = triangles
            .into_iter()
            .filter(|t| {
                triangle_area(
                    &vertices[t[0] as usize],
                    &vertices[t[1] as usize],
                    &vertices[t[2] as usize],
                ) >= MIN_TRIANGLE_AREA
            })
            .collect();
        let report = CleanReport {
            input_triangles: input,
            dropped_degenerate: input - triangles.len(),
            merged_vertices: 0,
        };
        Ok((Self::assemble(vertices, triangles, frame), report))
    }

    /// Builds a mesh from an unindexed triangle list, welding bit-identical
    /// vertices first.
    pub fn from_soup(soup: &[[Point3; 3]], frame: FrameId) -> Result<(Self, CleanReport), MeshError> {
        let mut lookup: HashMap<[u64; 3], u32> = HashMap::new();
        let mut vertices = Vec::new();
        let mut triangles = Vec::with_capacity(soup.len());
        for tri in soup {
            let mut idx = [0u32; 3];
            for (k, v) in tri.iter().enumerate() {
                if !v.iter().all(|c| c.is_finite()) {
                    return Err(MeshError::NonFinite(vertices.len()));
                }
                // +0.0 so that -0.0 and 0.0 weld together
                let key = [(v.x + 0.0).to_bits(), (v.y + 0.0).to_bits(), (v.z + 0.0).to_bits()];
                idx[k] = *lookup.entry(key).or_insert_with(|| {
                    vertices.push(*v);
                    (vertices.len() - 1) as u32
                });
            }
            triangles.push(idx);
        }
        let merged = soup.len() * 3 - vertices.len();
        let (mesh, mut report) = Self::new(vertices, triangles, frame)?;
        report.merged_vertices = merged;
        Ok((mesh, report))
    }

    fn assemble(vertices: Vec<Point3>, triangles: Vec<[u32; 3]>, frame: FrameId) -> Self {
        let boxes: Vec<Aabb> = triangles
            .iter()
            .map(|t| Aabb::from_points(t.iter().map(|&i| &vertices[i as usize])))
            .collect();
        let bvh = Bvh::build(&boxes);
        Self {
            vertices,
            triangles,
            frame,
            bvh,
        }
    }

    pub fn vertices(&self) -> &[Point3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn frame(&self) -> FrameId {
        self.frame
    }

    pub fn bvh(&self) -> &Bvh {
        &self.bvh
    }

    pub fn len(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn corners(&self, tri: usize) -> [Point3; 3] {
        let t = self.triangles[tri];
        [
            self.vertices[t[0] as usize],
            self.vertices[t[1] as usize],
            self.vertices[t[2] as usize],
        ]
    }

    pub fn triangle_bounds(&self) -> Vec<Aabb> {
        (0..self.len()).map(|i| Aabb::from_points(&self.corners(i))).collect()
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::from_points(&self.vertices)
    }

    pub fn area(&self, tri: usize) -> f64 {
        let [a, b, c] = self.corners(tri);
        triangle_area(&a, &b, &c)
    }

    /// Unit face normal following the right-hand winding.
    pub fn face_normal(&self, tri: usize) -> Vec3 {
        let [a, b, c] = self.corners(tri);
        (b - a).cross(&(c - a)).normalize()
    }

    /// Same triangles with vertices mapped through `target_t_self`; rebuilds
    /// the hierarchy. Meant for fixtures and exports, not per-frame posing.
    pub fn transformed(&self, target_t_self: &RigidTransform, target: FrameId) -> TriangleMesh {
        let vertices = self.vertices.iter().map(|v| target_t_self.apply_point(v)).collect();
        Self::assemble(vertices, self.triangles.clone(), target)
    }

    /// Concatenates meshes expressed in the same frame.
    pub fn merged(parts: &[TriangleMesh], frame: FrameId) -> Result<TriangleMesh, MeshError> {
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        for p in parts {
            let base = vertices.len() as u32;
            vertices.extend_from_slice(&p.vertices);
            triangles.extend(p.triangles.iter().map(|t| [t[0] + base, t[1] + base, t[2] + base]));
        }
        if triangles.is_empty() {
            return Err(MeshError::Empty);
        }
        Ok(Self::new(vertices, triangles, frame)?.0)
    }

    /// Unsigned distance from `p` to the closest point of the surface, by
    /// exhaustive scan.
    pub fn distance_to(&self, p: &Point3) -> f64 {
        (0..self.len())
            .map(|i| {
                let [a, b, c] = self.corners(i);
                (closest_point_on_triangle(p, &a, &b, &c) - p).norm()
            })
            .fold(f64::INFINITY, f64::min)
    }
}

pub(crate) fn triangle_area(a: &Point3, b: &Point3, c: &Point3) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}

/// Closest point on triangle `abc` to `p` (Voronoi-region walk).
pub fn closest_point_on_triangle(p: &Point3, a: &Point3, b: &Point3, c: &Point3) -> Point3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}
