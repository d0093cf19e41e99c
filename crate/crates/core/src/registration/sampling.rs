use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{PointCloud, TriangleMesh};
use crate::transform::Point3;

use super::RegistrationError;

/// Anything that can produce its surface for a joint configuration.
pub trait PosedModel {
    /// The posed surface, expressed in the model's placement frame.
    fn posed_mesh(&self, joints: &[f64]) -> Result<TriangleMesh, RegistrationError>;
}

/// Area-weighted uniform surface samples with face normals. Exactly `count`
/// points, reproducible for a given seed.
pub fn sample_surface(mesh: &TriangleMesh, count: usize, seed: u64) -> Result<PointCloud, RegistrationError> {
    let areas: Vec<f64> = (0..mesh.len()).map(|t| mesh.area(t)).collect();
    let pick = WeightedIndex::new(&areas).map_err(|_| RegistrationError::EmptyMesh)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(count);
    let mut normals = Vec::with_capacity(count);
    for _ in 0..count {
        let t = pick.sample(&mut rng);
        let [a, b, c] = mesh.corners(t);
        let (mut u, mut v): (f64, f64) = (rng.random(), rng.random());
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        points.push(Point3::from(a.coords + (b - a) * u + (c - a) * v));
        normals.push(mesh.face_normal(t));
    }
    Ok(PointCloud::with_normals(points, normals, mesh.frame()))
}

/// Samples the model surface at `joints`; the virtual counterpart of a depth scan.
pub fn sample_virtual(
    model: &dyn PosedModel,
    joints: &[f64],
    count: usize,
    seed: u64,
) -> Result<PointCloud, RegistrationError> {
    if count == 0 {
        return Err(RegistrationError::EmptyCloud("virtual sample count is zero"));
    }
    let mesh = model.posed_mesh(joints)?;
    sample_surface(&mesh, count, seed)
}
