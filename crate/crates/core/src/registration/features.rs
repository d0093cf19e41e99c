//! Local plane-fit normals and a point-feature histogram descriptor.

use nalgebra::Matrix3;
use rayon::prelude::*;

use crate::geometry::KdTree;
use crate::transform::{Point3, Vec3};

/// Unit normal of the best-fit plane through the `k` nearest neighbours
/// (sign is arbitrary). Falls back to +z where the neighbourhood is degenerate.
pub fn estimate_normals(points: &[Point3], tree: &KdTree, k: usize) -> Vec<Vec3> {
    points
        .par_iter()
        .map(|p| {
            let nb = tree.knn(p, k.max(3));
            let pts: Vec<Point3> = nb.iter().map(|n| tree.points()[n.index]).collect();
            plane_normal(&pts).unwrap_or_else(Vec3::z)
        })
        .collect()
}

fn plane_normal(pts: &[Point3]) -> Option<Vec3> {
    if pts.len() < 3 {
        return None;
    }
    let c = pts.iter().fold(Vec3::zeros(), |a, p| a + p.coords) / pts.len() as f64;
    let mut cov = Matrix3::zeros();
    for p in pts {
        let d = p.coords - c;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigen();
    let (i, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))?;
    let n = eig.eigenvectors.column(i).into_owned();
    let norm = n.norm();
    (norm > 0.0 && norm.is_finite()).then(|| n / norm)
}

/// Bins per feature; the descriptor has three features.
pub const BINS: usize = 11;
pub const DESCRIPTOR_LEN: usize = 3 * BINS;

pub type Descriptor = [f32; DESCRIPTOR_LEN];

fn bin(x: f64) -> usize {
    ((x.clamp(0.0, 1.0) * BINS as f64) as usize).min(BINS - 1)
}

/// Histograms over the neighbours within `radius` of each query point of
/// `|n . n_j|`, `|n . d|` (d the unit offset to the neighbour) and `|d| / radius`.
/// All three are invariant to rigid motion and to normal sign.
pub fn describe(queries: &[usize], points: &[Point3], normals: &[Vec3], tree: &KdTree, radius: f64) -> Vec<Descriptor> {
    queries
        .par_iter()
        .map(|&q| {
            let p = points[q];
            let n = normals[q];
            let mut h = [0f32; DESCRIPTOR_LEN];
            let mut count = 0usize;
            for j in tree.within(&p, radius) {
                if j == q {
                    continue;
                }
                let d = points[j] - p;
                let dist = d.norm();
                if dist == 0.0 {
                    continue;
                }
                let dh = d / dist;
                h[bin(n.dot(&normals[j]).abs())] += 1.0;
                h[BINS + bin(n.dot(&dh).abs())] += 1.0;
                h[2 * BINS + bin(dist / radius)] += 1.0;
                count += 1;
            }
            if count > 0 {
                let inv = 1.0 / count as f32;
                h.iter_mut().for_each(|v| *v *= inv);
            }
            h
        })
        .collect()
}

pub fn descriptor_distance(a: &Descriptor, b: &Descriptor) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f32>().sqrt()
}
