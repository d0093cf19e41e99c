//! Robot/tracker hand-eye calibration and the CBCT transform chain.
//!
//! With `E_i = e_t_r` (robot pose sample `i`), `M_i = o_t_m` (tracked marker
//! pose) and the unknown `X = r_t_o`, rigidity of the marker on the
//! end-effector gives `E_i X M_i = E_{i+1} X M_{i+1}` for consecutive samples,
//! i.e. `A_i X = X B_i` with `A_i = E_{i+1}⁻¹ E_i` and `B_i = M_{i+1} M_i⁻¹`.
//! The rotation is solved first as the null vector of the stacked quaternion
//! constraint, then the translation by linear least squares.

use nalgebra::{Matrix3, Matrix4, Quaternion, SymmetricEigen, UnitQuaternion, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::PointCloud;
use crate::transform::{FrameId, GraphError, RigidTransform, TransformGraph, Vec3};

/// Relative motions rotating less than this are dropped as noise-dominated.
pub const MIN_MOTION_ANGLE: f64 = 1.0 * std::f64::consts::PI / 180.0;
/// At least two usable motion axes must subtend more than this.
pub const MIN_AXIS_SPREAD: f64 = 1.0 * std::f64::consts::PI / 180.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("need at least 3 pose pairs, got {0}")]
    InsufficientData(usize),
    #[error("degenerate motion: {0}")]
    DegenerateMotion(String),
    #[error("fiducial sets differ in size ({ct} vs {measured}) or are empty")]
    FiducialMismatch { ct: usize, measured: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// One synchronized sample: robot pose `e_t_r` and tracked marker pose `o_t_m`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosePair {
    #[serde(rename = "robot")]
    pub robot_pose: RigidTransform,
    #[serde(rename = "marker")]
    pub marker_pose: RigidTransform,
    #[serde(default, skip_serializing)]
    pub index: usize,
}

impl PosePair {
    pub fn new(robot_pose: RigidTransform, marker_pose: RigidTransform, index: usize) -> Self {
        Self {
            robot_pose,
            marker_pose,
            index,
        }
    }
}

/// Reads a JSON array of `{"robot":…,"marker":…}`; indices follow array order.
pub fn parse_pose_pairs(json: &str) -> Result<Vec<PosePair>, serde_json::Error> {
    let mut pairs: Vec<PosePair> = serde_json::from_str(json)?;
    for (i, p) in pairs.iter_mut().enumerate() {
        p.index = i;
    }
    Ok(pairs)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HandEyeSolution {
    /// `r_t_o`: optical camera expressed in the robot base.
    pub x: RigidTransform,
    /// RMS rotation disagreement of `A X` vs `X B`, radians.
    pub rotation_residual: f64,
    /// RMS translation disagreement of `A X` vs `X B`, mm.
    pub translation_residual: f64,
    /// Motions that passed the minimum-rotation filter.
    pub motions_used: usize,
}

#[derive(Clone, Copy, Debug)]
struct Motion {
    a: RigidTransform,
    b: RigidTransform,
}

fn consecutive_motions(pairs: &[PosePair]) -> Vec<Motion> {
    pairs
        .windows(2)
        .map(|w| Motion {
            a: w[1].robot_pose.inverse().compose(&w[0].robot_pose),
            b: w[1].marker_pose.compose(&w[0].marker_pose.inverse()),
        })
        .collect()
}

fn left_mat(q: &Quaternion<f64>) -> Matrix4<f64> {
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    Matrix4::new(
        w, -x, -y, -z, //
        x, w, -z, y, //
        y, z, w, -x, //
        z, -y, x, w,
    )
}

fn right_mat(q: &Quaternion<f64>) -> Matrix4<f64> {
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    Matrix4::new(
        w, -x, -y, -z, //
        x, w, z, -y, //
        y, -z, w, x, //
        z, y, -x, w,
    )
}

/// Quaternion with non-negative scalar part.
fn canonical(q: &UnitQuaternion<f64>) -> Quaternion<f64> {
    let q = q.into_inner();
    if q.w < 0.0 {
        -q
    } else {
        q
    }
}

fn check_axis_spread(usable: &[Motion]) -> Result<(), CalibrationError> {
    let axes: Vec<Vec3> = usable
        .iter()
        .filter_map(|m| m.a.rotation().axis().map(|a| a.into_inner()))
        .collect();
    let cos_limit = MIN_AXIS_SPREAD.cos();
    let spread = axes
        .iter()
        .enumerate()
        .any(|(i, a)| axes[i + 1..].iter().any(|b| a.dot(b).abs() < cos_limit));
    if spread {
        Ok(())
    } else {
        Err(CalibrationError::DegenerateMotion(
            "all relative rotations share one axis".into(),
        ))
    }
}

/// Solves `A X = X B` over consecutive pose pairs.
pub fn solve_handeye(pairs: &[PosePair]) -> Result<HandEyeSolution, CalibrationError> {
    if pairs.len() < 3 {
        return Err(CalibrationError::InsufficientData(pairs.len()));
    }
    let motions = consecutive_motions(pairs);
    let usable: Vec<Motion> = motions
        .iter()
        .copied()
        .filter(|m| m.a.rotation_angle() >= MIN_MOTION_ANGLE)
        .collect();
    if usable.len() < 2 {
        return Err(CalibrationError::DegenerateMotion(format!(
            "only {} motion(s) rotate by at least 1°",
            usable.len()
        )));
    }
    check_axis_spread(&usable)?;

    let mut normal = Matrix4::<f64>::zeros();
    for m in &usable {
        let d = left_mat(&canonical(m.a.rotation())) - right_mat(&canonical(m.b.rotation()));
        normal += d.transpose() * d;
    }
    let eig = SymmetricEigen::new(normal);
    let (min_idx, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("4 eigenvalues");
    let v: Vector4<f64> = eig.eigenvectors.column(min_idx).into();
    let rot_x = UnitQuaternion::from_quaternion(Quaternion::new(v[0], v[1], v[2], v[3]));

    let mut lhs = Matrix3::<f64>::zeros();
    let mut rhs = Vec3::zeros();
    for m in &usable {
        let c = m.a.rotation_matrix() - Matrix3::identity();
        let d = rot_x * m.b.translation() - m.a.translation();
        lhs += c.transpose() * c;
        rhs += c.transpose() * d;
    }
    let t_x = lhs
        .cholesky()
        .map(|ch| ch.solve(&rhs))
        .or_else(|| lhs.try_inverse().map(|inv| inv * rhs))
        .ok_or_else(|| CalibrationError::DegenerateMotion("translation is unobservable".into()))?;

    let x = RigidTransform::new(rot_x, t_x);
    let (rotation_residual, translation_residual) = residuals(&motions, &x);
    Ok(HandEyeSolution {
        x,
        rotation_residual,
        translation_residual,
        motions_used: usable.len(),
    })
}

/// RMS rotation (rad) and translation (mm) disagreement between `A X` and `X B`
/// over every consecutive motion.
fn residuals(motions: &[Motion], x: &RigidTransform) -> (f64, f64) {
    let n = motions.len().max(1) as f64;
    let (r2, t2) = motions.iter().fold((0.0, 0.0), |(r2, t2), m| {
        let lhs = m.a.compose(x);
        let rhs = x.compose(&m.b);
        (
            r2 + lhs.angle_to(&rhs).powi(2),
            t2 + lhs.translation_distance(&rhs).powi(2),
        )
    });
    ((r2 / n).sqrt(), (t2 / n).sqrt())
}

/// `c_t_r = c_t_o · (r_t_o)⁻¹`.
pub fn derive_ct_robot(x: &HandEyeSolution, ct_camera: &RigidTransform) -> RigidTransform {
    ct_camera.compose(&x.x.inverse())
}

/// `c_t_u = c_t_r · (u_t_r)⁻¹`.
pub fn derive_ct_ultrasound(ct_robot: &RigidTransform, us_robot: &RigidTransform) -> RigidTransform {
    ct_robot.compose(&us_robot.inverse())
}

/// RMS distance (mm) between CT fiducials and measured fiducials after
/// mapping both into the CBCT frame through `graph`.
pub fn evaluate_tre(
    graph: &TransformGraph,
    fiducials_ct: &PointCloud,
    fiducials_measured: &PointCloud,
) -> Result<f64, CalibrationError> {
    if fiducials_ct.len() != fiducials_measured.len() || fiducials_ct.is_empty() {
        return Err(CalibrationError::FiducialMismatch {
            ct: fiducials_ct.len(),
            measured: fiducials_measured.len(),
        });
    }
    let c_t_ref = graph.query(FrameId::Cbct, fiducials_ct.frame)?;
    let c_t_meas = graph.query(FrameId::Cbct, fiducials_measured.frame)?;
    let sum: f64 = fiducials_ct
        .points
        .iter()
        .zip(&fiducials_measured.points)
        .map(|(r, m)| (c_t_ref.apply_point(r) - c_t_meas.apply_point(m)).norm_squared())
        .sum();
    Ok((sum / fiducials_ct.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transform::testutil::random_transform;
    use crate::transform::Point3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    /// Forward relation: `M_i = X⁻¹ E_i⁻¹ (e_t_m)`.
    fn synthesize(x: &RigidTransform, e_t_m: &RigidTransform, robot: &[RigidTransform]) -> Vec<PosePair> {
        robot
            .iter()
            .enumerate()
            .map(|(i, e)| PosePair::new(*e, x.inverse().compose(&e.inverse()).compose(e_t_m), i))
            .collect()
    }

    fn random_robot_poses(rng: &mut ChaCha8Rng, n: usize) -> Vec<RigidTransform> {
        (0..n)
            .map(|_| {
                let axis = Vec3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                );
                let angle = rng.random_range(0.3..1.6);
                let t = Vec3::new(
                    rng.random_range(300.0..700.0),
                    rng.random_range(-300.0..300.0),
                    rng.random_range(100.0..500.0),
                );
                // base_t_ee pose, stored as e_t_r
                RigidTransform::from_axis_angle(&axis, angle, t).inverse()
            })
            .collect()
    }

    /// Per-axis translation noise `sigma_t`; rotation error of angle
    /// `N(0, sigma_r)` about a uniformly random axis.
    fn perturb(rng: &mut ChaCha8Rng, t: &RigidTransform, sigma_t: f64, sigma_r: f64) -> RigidTransform {
        let unit = Normal::new(0.0, 1.0).unwrap();
        let axis = Vec3::new(unit.sample(rng), unit.sample(rng), unit.sample(rng)).normalize();
        let dr = axis * unit.sample(rng) * sigma_r;
        let dt = Vec3::new(unit.sample(rng), unit.sample(rng), unit.sample(rng)) * sigma_t;
        t.compose(&RigidTransform::from_rotation_vector(&dr, dt))
    }

    #[test]
    fn identity_when_marker_coincides_with_end_effector() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let robot = random_robot_poses(&mut rng, 10);
        let pairs = synthesize(&RigidTransform::identity(), &RigidTransform::identity(), &robot);
        let sol = solve_handeye(&pairs).unwrap();
        assert!(sol.x.approx_eq(&RigidTransform::identity(), 1e-9, 1e-9));
        assert!(sol.rotation_residual <= 1e-9 && sol.translation_residual <= 1e-9);
    }

    #[test]
    fn recovers_random_x_noise_free() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let x = random_transform(&mut rng, 2000.0);
            let e_t_m = random_transform(&mut rng, 150.0);
            let pairs = synthesize(&x, &e_t_m, &random_robot_poses(&mut rng, 30));
            let sol = solve_handeye(&pairs).unwrap();
            assert!(
                sol.x.translation_distance(&x) < 1e-6,
                "{}",
                sol.x.translation_distance(&x)
            );
            assert!(sol.x.angle_to(&x) < 1e-8);
            assert!(sol.rotation_residual <= 1e-9 && sol.translation_residual <= 1e-9);
        }
    }

    #[test]
    fn solve_regenerate_solve_is_a_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_transform(&mut rng, 1500.0);
        let e_t_m = random_transform(&mut rng, 100.0);
        let robot = random_robot_poses(&mut rng, 12);
        let first = solve_handeye(&synthesize(&x, &e_t_m, &robot)).unwrap();
        let second = solve_handeye(&synthesize(&first.x, &e_t_m, &robot)).unwrap();
        assert!(first.x.approx_eq(&second.x, 1e-6, 1e-6));
    }

    #[test]
    fn base_relocation_leaves_x_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_transform(&mut rng, 1500.0);
        let e_t_m = random_transform(&mut rng, 100.0);
        let robot = random_robot_poses(&mut rng, 15);
        let mut pairs = synthesize(&x, &e_t_m, &robot);
        let noisy: Vec<PosePair> = pairs
            .iter()
            .map(|p| PosePair {
                marker_pose: perturb(&mut rng, &p.marker_pose, 0.3, 0.001),
                ..*p
            })
            .collect();
        let reference = solve_handeye(&noisy).unwrap();
        let g = random_transform(&mut rng, 800.0);
        for (p, n) in pairs.iter_mut().zip(&noisy) {
            p.robot_pose = g.compose(&p.robot_pose);
            p.marker_pose = n.marker_pose;
        }
        let moved = solve_handeye(&pairs).unwrap();
        assert!(moved.x.approx_eq(&reference.x, 1e-6, 1e-6));
    }

    /// Tracker noise on every marker pose; robot poses come from the
    /// controller and stay exact. Camera 1 m from the robot base.
    #[test]
    fn noisy_recovery_within_two_mm_half_degree() {
        let mut worst_t: f64 = 0.0;
        let mut worst_r: f64 = 0.0;
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let x0 = random_transform(&mut rng, 1.0);
            let x = RigidTransform::new(*x0.rotation(), x0.translation().normalize() * 1000.0);
            let e_t_m = random_transform(&mut rng, 150.0);
            let pairs: Vec<PosePair> = synthesize(&x, &e_t_m, &random_robot_poses(&mut rng, 30))
                .into_iter()
                .map(|p| PosePair {
                    marker_pose: perturb(&mut rng, &p.marker_pose, 0.5, 0.1f64.to_radians()),
                    ..p
                })
                .collect();
            let sol = solve_handeye(&pairs).unwrap();
            worst_t = worst_t.max(sol.x.translation_distance(&x));
            worst_r = worst_r.max(sol.x.angle_to(&x));
        }
        assert!(worst_t < 2.0, "worst translation error {worst_t}");
        assert!(
            worst_r < 0.5f64.to_radians(),
            "worst rotation error {}",
            worst_r.to_degrees()
        );
    }

    #[test]
    fn mean_rotation_residual_grows_with_noise() {
        let sigmas = [0.0, 0.05, 0.1, 0.2];
        let means: Vec<f64> = sigmas
            .iter()
            .map(|s: &f64| {
                (0..100)
                    .map(|seed| {
                        let mut rng = ChaCha8Rng::seed_from_u64(seed);
                        let x = random_transform(&mut rng, 1000.0);
                        let e_t_m = random_transform(&mut rng, 100.0);
                        let pairs: Vec<PosePair> = synthesize(&x, &e_t_m, &random_robot_poses(&mut rng, 20))
                            .into_iter()
                            .map(|p| PosePair {
                                marker_pose: perturb(&mut rng, &p.marker_pose, 0.0, s.to_radians()),
                                ..p
                            })
                            .collect();
                        solve_handeye(&pairs).unwrap().rotation_residual
                    })
                    .sum::<f64>()
                    / 100.0
            })
            .collect();
        assert!(means.windows(2).all(|w| w[0] <= w[1]), "{means:?}");
    }

    #[test]
    fn too_few_pairs() {
        let p = PosePair::new(RigidTransform::identity(), RigidTransform::identity(), 0);
        assert_eq!(solve_handeye(&[p, p]), Err(CalibrationError::InsufficientData(2)));
    }

    #[test]
    fn single_axis_motion_is_degenerate() {
        let robot: Vec<RigidTransform> = (0..6)
            .map(|i| RigidTransform::from_axis_angle(&Vec3::z(), 0.3 * i as f64, Vec3::new(i as f64 * 10.0, 0.0, 0.0)))
            .collect();
        let pairs = synthesize(&RigidTransform::identity(), &RigidTransform::identity(), &robot);
        assert!(matches!(
            solve_handeye(&pairs),
            Err(CalibrationError::DegenerateMotion(_))
        ));
        let still = vec![PosePair::new(RigidTransform::identity(), RigidTransform::identity(), 0); 5];
        assert!(matches!(
            solve_handeye(&still),
            Err(CalibrationError::DegenerateMotion(_))
        ));
    }

    #[test]
    fn chain_derivations_match_formulas() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let id_sol = HandEyeSolution {
            x: RigidTransform::identity(),
            rotation_residual: 0.0,
            translation_residual: 0.0,
            motions_used: 0,
        };
        assert!(derive_ct_robot(&id_sol, &RigidTransform::identity()).approx_eq(&RigidTransform::identity(), 0.0, 0.0));
        for _ in 0..50 {
            let x = random_transform(&mut rng, 1000.0);
            let c_t_o = random_transform(&mut rng, 1000.0);
            let sol = HandEyeSolution { x, ..id_sol };
            let c_t_r = derive_ct_robot(&sol, &c_t_o);
            let by_hand = RigidTransform::from_matrix_parts(
                &(c_t_o.to_matrix() * x.to_matrix().try_inverse().unwrap())
                    .fixed_view::<3, 3>(0, 0)
                    .into(),
                (c_t_o.to_matrix() * x.to_matrix().try_inverse().unwrap())
                    .fixed_view::<3, 1>(0, 3)
                    .into(),
            );
            assert!(c_t_r.approx_eq(&by_hand, 1e-9, 1e-9));
            let mut g = TransformGraph::new();
            g.insert(FrameId::Cbct, FrameId::RobotBase, c_t_r, 0).unwrap();
            assert_eq!(g.query(FrameId::Cbct, FrameId::RobotBase).unwrap(), c_t_r);

            let u_t_r = random_transform(&mut rng, 1000.0);
            assert!(derive_ct_ultrasound(&c_t_r, &c_t_r).approx_eq(&RigidTransform::identity(), 1e-9, 1e-9));
            let c_t_u = derive_ct_ultrasound(&c_t_r, &u_t_r);
            let m = c_t_r.to_matrix() * u_t_r.to_matrix().try_inverse().unwrap();
            assert!((c_t_u.to_matrix() - m).amax() < 1e-9);
        }
    }

    #[test]
    fn tre_of_identical_and_shifted_sets() {
        let pts: Vec<Point3> = (0..6)
            .map(|i| Point3::new(i as f64 * 10.0, (i * i) as f64, -3.0))
            .collect();
        let ct = PointCloud::new(pts.clone(), FrameId::Cbct);
        let g = TransformGraph::new();
        assert_eq!(evaluate_tre(&g, &ct, &ct).unwrap(), 0.0);
        let shifted = PointCloud::new(pts.iter().map(|p| p + Vec3::x()).collect(), FrameId::Cbct);
        assert!((evaluate_tre(&g, &ct, &shifted).unwrap() - 1.0).abs() < 1e-12);
        let elsewhere = PointCloud::new(pts, FrameId::RobotBase);
        assert!(matches!(
            evaluate_tre(&g, &ct, &elsewhere),
            Err(CalibrationError::Graph(_))
        ));
        let short = PointCloud::new(vec![Point3::origin()], FrameId::Cbct);
        assert!(matches!(
            evaluate_tre(&g, &ct, &short),
            Err(CalibrationError::FiducialMismatch { .. })
        ));
    }

    #[test]
    fn pose_pair_file_format() {
        let json = r#"[{"robot":{"q":[1,0,0,0],"t":[0,0,0]},"marker":{"q":[1,0,0,0],"t":[1,2,3]}},
                       {"robot":{"q":[1,0,0,0],"t":[0,0,0]},"marker":{"q":[1,0,0,0],"t":[4,5,6]}}]"#;
        let pairs = parse_pose_pairs(json).unwrap();
        assert_eq!(pairs[1].index, 1);
        assert_eq!(pairs[1].marker_pose.translation().z, 6.0);
        assert!(parse_pose_pairs("[{").is_err());
    }
}
