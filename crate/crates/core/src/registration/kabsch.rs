use nalgebra::{Matrix3, SVD};

use crate::transform::{Point3, RigidTransform, Vec3};

/// Closed-form rigid fit: the transform `T` minimizing `sum |T src_i - dst_i|^2`.
///
/// Returns `None` for fewer than three pairs or when the source points are
/// (nearly) collinear, since rotation about that line is then unconstrained.
pub fn fit_rigid(src: &[Point3], dst: &[Point3]) -> Option<RigidTransform> {
    assert_eq!(src.len(), dst.len());
    let n = src.len();
    if n < 3 {
        return None;
    }
    let inv = 1.0 / n as f64;
    let cs = src.iter().fold(Vec3::zeros(), |a, p| a + p.coords) * inv;
    let cd = dst.iter().fold(Vec3::zeros(), |a, p| a + p.coords) * inv;

    let mut h = Matrix3::zeros();
    let mut spread = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        let a = s.coords - cs;
        h += (d.coords - cd) * a.transpose();
        spread += a * a.transpose();
    }
    let sv = spread.symmetric_eigenvalues();
    let (_, mid, hi) = sorted3(sv.x, sv.y, sv.z);
    if !(mid > 1e-12 * hi.max(1.0)) {
        return None;
    }

    let svd = SVD::new(h, true, true);
    let u = svd.u?;
    let v_t = svd.v_t?;
    let d = (u * v_t).determinant().signum();
    let r = u * Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, d)) * v_t;
    let t = cd - r * cs;
    Some(RigidTransform::from_matrix_parts(&r, t))
}

fn sorted3(a: f64, b: f64, c: f64) -> (f64, f64, f64) {
    let mut v = [a, b, c];
    v.sort_by(f64::total_cmp);
    (v[0], v[1], v[2])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transform::testutil::random_transform;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn recovers_random_transform_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let t = random_transform(&mut rng, 500.0);
            let src: Vec<Point3> = (0..20)
                .map(|_| {
                    Point3::new(
                        rng.random_range(-100.0..100.0),
                        rng.random_range(-100.0..100.0),
                        rng.random_range(-100.0..100.0),
                    )
                })
                .collect();
            let dst: Vec<Point3> = src.iter().map(|p| t.apply_point(p)).collect();
            let got = fit_rigid(&src, &dst).unwrap();
            assert!(got.approx_eq(&t, 1e-9, 1e-11));
        }
    }

    #[test]
    fn never_returns_a_reflection() {
        // Mirrored target: the best proper rotation still has det +1.
        let src = [
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
            Point3::new(0.0, 0.0, 1.0),
        ];
        let dst: Vec<Point3> = src.iter().map(|p| Point3::new(-p.x, p.y, p.z)).collect();
        let got = fit_rigid(&src, &dst).unwrap();
        assert!((got.rotation_matrix().determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn collinear_and_short_inputs_are_rejected() {
        let line: Vec<Point3> = (0..5).map(|i| Point3::new(i as f64, 2.0 * i as f64, 0.0)).collect();
        assert!(fit_rigid(&line, &line).is_none());
        assert!(fit_rigid(&line[..2], &line[..2]).is_none());
    }
}
