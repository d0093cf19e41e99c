use serde::{Deserialize, Serialize};

use crate::transform::{Point3, Vec3};

/// Axis-aligned box, closed on every face.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Point3,
    pub max: Point3,
}

impl Aabb {
    /// Returns `None` when `min > max` on any axis.
    pub fn new(min: Point3, max: Point3) -> Option<Self> {
        (min.x <= max.x && min.y <= max.y && min.z <= max.z).then_some(Self { min, max })
    }

    pub fn empty() -> Self {
        Self {
            min: Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY),
            max: Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
        }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Point3>) -> Self {
        points.into_iter().fold(Self::empty(), |b, p| b.grown(p))
    }

    pub fn is_empty(&self) -> bool {
        self.min.x > self.max.x
    }

    pub fn grown(&self, p: &Point3) -> Self {
        Self {
            min: self.min.inf(p),
            max: self.max.sup(p),
        }
    }

    pub fn union(&self, other: &Aabb) -> Self {
        Self {
            min: self.min.inf(&other.min),
            max: self.max.sup(&other.max),
        }
    }

    pub fn contains(&self, p: &Point3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn contains_box(&self, other: &Aabb) -> bool {
        self.contains(&other.min) && self.contains(&other.max)
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn center(&self) -> Point3 {
        nalgebra::center(&self.min, &self.max)
    }

    pub fn surface_area(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let e = self.extent();
        2.0 * (e.x * e.y + e.y * e.z + e.z * e.x)
    }

    pub fn padded(&self, margin: f64) -> Self {
        let m = Vec3::repeat(margin);
        Self {
            min: self.min - m,
            max: self.max + m,
        }
    }

    /// Slab test. Returns the entry parameter when the segment `[t_min, t_max]`
    /// of the ray overlaps the box.
    pub fn ray_entry(&self, origin: &Point3, inv_dir: &Vec3, t_min: f64, t_max: f64) -> Option<f64> {
        let mut lo = t_min;
        let mut hi = t_max;
        for i in 0..3 {
            let a = (self.min[i] - origin[i]) * inv_dir[i];
            let b = (self.max[i] - origin[i]) * inv_dir[i];
            // NaN arises for 0 * inf when the origin sits on a slab plane of a
            // parallel ray; treat it as inside that slab.
            let (near, far) = if a <= b { (a, b) } else { (b, a) };
            if !near.is_nan() {
                lo = lo.max(near);
            }
            if !far.is_nan() {
                hi = hi.min(far);
            }
            if lo > hi {
                return None;
            }
        }
        Some(lo)
    }
}
