//! Closed primitive meshes used to build the procedural robot and phantom.

use crate::geometry::TriangleMesh;
use crate::transform::{FrameId, Point3, RigidTransform, Vec3};

/// Accumulates triangles from several primitives into one indexed mesh.
#[derive(Default)]
pub struct MeshBuilder {
    vertices: Vec<Point3>,
    triangles: Vec<[u32; 3]>,
}

impl MeshBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    fn base(&self) -> u32 {
        self.vertices.len() as u32
    }

    /// Axis-aligned box (in the coordinates given by `pose`) with outward winding.
    pub fn cuboid(&mut self, pose: &RigidTransform, half: Vec3) -> &mut Self {
        let b = self.base();
        for i in 0..8u32 {
            let s = |bit: u32| if i >> bit & 1 == 1 { 1.0 } else { -1.0 };
            let local = Point3::new(s(0) * half.x, s(1) * half.y, s(2) * half.z);
            self.vertices.push(pose.apply_point(&local));
        }
        const FACES: [[u32; 4]; 6] = [
            [0, 2, 3, 1], // -z
            [4, 5, 7, 6], // +z
            [0, 1, 5, 4], // -y
            [2, 6, 7, 3], // +y
            [0, 4, 6, 2], // -x
            [1, 3, 7, 5], // +x
        ];
        for f in FACES {
            self.triangles.push([b + f[0], b + f[1], b + f[2]]);
            self.triangles.push([b + f[0], b + f[2], b + f[3]]);
        }
        self
    }

    /// Capped cylinder between two points.
    pub fn cylinder(&mut self, from: Point3, to: Point3, radius: f64, segments: u32) -> &mut Self {
        let axis = to - from;
        let len = axis.norm();
        let z = axis / len;
        let helper = if z.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
        let x = z.cross(&helper).normalize();
        let y = z.cross(&x);
        let b = self.base();
        self.vertices.push(from);
        self.vertices.push(to);
        for k in 0..segments {
            let a = 2.0 * std::f64::consts::PI * k as f64 / segments as f64;
            let r = (x * a.cos() + y * a.sin()) * radius;
            self.vertices.push(from + r);
            self.vertices.push(to + r);
        }
        for k in 0..segments {
            let (i0, i1) = (b + 2 + 2 * k, b + 2 + 2 * ((k + 1) % segments));
            // Bottom cap, side quad, top cap.
            self.triangles.push([b, i1, i0]);
            self.triangles.push([i0, i1, i1 + 1]);
            self.triangles.push([i0, i1 + 1, i0 + 1]);
            self.triangles.push([b + 1, i0 + 1, i1 + 1]);
        }
        self
    }

    pub fn build(&self, frame: FrameId) -> TriangleMesh {
        TriangleMesh::new(self.vertices.clone(), self.triangles.clone(), frame)
            .expect("primitive meshes are valid")
            .0
    }
}
