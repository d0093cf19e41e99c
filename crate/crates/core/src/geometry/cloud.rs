use crate::transform::{FrameId, Point3, RigidTransform, Vec3};

use super::Aabb;

/// Points in mm with optional per-point unit normals, labelled with the frame
/// they are expressed in.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub normals: Option<Vec<Vec3>>,
    pub frame: FrameId,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>, frame: FrameId) -> Self {
        Self {
            points,
            normals: None,
            frame,
        }
    }

    /// Panics if `normals` and `points` differ in length.
    pub fn with_normals(points: Vec<Point3>, normals: Vec<Vec3>, frame: FrameId) -> Self {
        assert_eq!(points.len(), normals.len(), "one normal per point");
        Self {
            points,
            normals: Some(normals),
            frame,
        }
    }

    pub fn empty(frame: FrameId) -> Self {
        Self::new(Vec::new(), frame)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::from_points(&self.points)
    }

    pub fn centroid(&self) -> Option<Point3> {
        if self.points.is_empty() {
            return None;
        }
        let sum = self.points.iter().fold(Vec3::zeros(), |acc, p| acc + p.coords);
        Some(Point3::from(sum / self.points.len() as f64))
    }

    /// Maps every point (and normal) through `target_t_self`, relabelling the cloud.
    pub fn transformed(&self, target_t_self: &RigidTransform, target: FrameId) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| target_t_self.apply_point(p)).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|ns| ns.iter().map(|n| target_t_self.apply_vector(n)).collect()),
            frame: target,
        }
    }

    /// Keeps the points selected by `keep`, preserving order.
    pub fn select(&self, keep: impl Fn(usize, &Point3) -> bool) -> PointCloud {
        let idx: Vec<usize> = (0..self.points.len()).filter(|&i| keep(i, &self.points[i])).collect();
        PointCloud {
            points: idx.iter().map(|&i| self.points[i]).collect(),
            normals: self.normals.as_ref().map(|ns| idx.iter().map(|&i| ns[i]).collect()),
            frame: self.frame,
        }
    }
}
