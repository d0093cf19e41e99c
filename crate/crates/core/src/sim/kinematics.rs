//! Generic 7-DoF serial arm: standard DH table, analytic Jacobian and
//! damped least-squares jogging.

use nalgebra::{Matrix6, SMatrix, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::transform::{RigidTransform, Vec3};

pub const DOF: usize = 7;

pub type Joints = [f64; DOF];
pub type Jacobian = SMatrix<f64, 6, DOF>;

/// One row of a standard DH table: `Rz(theta) Tz(d) Tx(a) Rx(alpha)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DhRow {
    pub a: f64,
    pub alpha: f64,
    pub d: f64,
    /// Symmetric joint limit in radians.
    pub limit: f64,
}

impl DhRow {
    pub fn transform(&self, theta: f64) -> RigidTransform {
        RigidTransform::from_axis_angle(&Vec3::z(), theta, Vec3::zeros()).compose(&self.fixed())
    }

    /// The part after the joint rotation: `Tz(d) Tx(a) Rx(alpha)`.
    pub fn fixed(&self) -> RigidTransform {
        RigidTransform::from_axis_angle(&Vec3::x(), self.alpha, Vec3::new(self.a, 0.0, self.d))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("joint {joint} at {angle:.4} rad exceeds limit {limit:.4}")]
    JointLimit { joint: usize, angle: f64, limit: f64 },
    #[error("expected {DOF} joint angles, got {0}")]
    WrongCount(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Kinematics {
    pub rows: [DhRow; DOF],
}

const DEG: f64 = std::f64::consts::PI / 180.0;
const HALF_PI: f64 = std::f64::consts::FRAC_PI_2;

impl Default for Kinematics {
    /// Offset-free 7-DoF arm, 1266 mm tall at home.
    fn default() -> Self {
        let row = |alpha: f64, d: f64, limit_deg: f64| DhRow {
            a: 0.0,
            alpha,
            d,
            limit: limit_deg * DEG,
        };
        Self {
            rows: [
                row(-HALF_PI, 340.0, 170.0),
                row(HALF_PI, 0.0, 120.0),
                row(HALF_PI, 400.0, 170.0),
                row(-HALF_PI, 0.0, 120.0),
                row(-HALF_PI, 400.0, 170.0),
                row(HALF_PI, 0.0, 120.0),
                row(0.0, 126.0, 170.0),
            ],
        }
    }
}

impl Kinematics {
    pub fn check_limits(&self, q: &[f64]) -> Result<Joints, KinematicsError> {
        let q: Joints = q.try_into().map_err(|_| KinematicsError::WrongCount(q.len()))?;
        for (i, (angle, row)) in q.iter().zip(&self.rows).enumerate() {
            if !(angle.abs() <= row.limit) {
                return Err(KinematicsError::JointLimit {
                    joint: i,
                    angle: *angle,
                    limit: row.limit,
                });
            }
        }
        Ok(q)
    }

    /// `r_t_e`: end-effector pose in the base frame.
    pub fn forward(&self, q: &[f64]) -> Result<RigidTransform, KinematicsError> {
        let q = self.check_limits(q)?;
        Ok(self.forward_unchecked(&q))
    }

    pub fn forward_unchecked(&self, q: &Joints) -> RigidTransform {
        self.frames(q)[DOF]
    }

    /// Base-frame poses of DH frames 0..=7 (frame 0 is the base itself).
    pub fn frames(&self, q: &Joints) -> [RigidTransform; DOF + 1] {
        let mut out = [RigidTransform::identity(); DOF + 1];
        for i in 0..DOF {
            out[i + 1] = out[i].compose(&self.rows[i].transform(q[i]));
        }
        out
    }

    /// Geometric Jacobian: rows 0..3 linear velocity of the end-effector
    /// origin (mm/rad), rows 3..6 angular velocity, both in the base frame.
    pub fn jacobian(&self, q: &Joints) -> Jacobian {
        let f = self.frames(q);
        let pe = f[DOF].translation();
        let mut j = Jacobian::zeros();
        for i in 0..DOF {
            let z = f[i].apply_vector(&Vec3::z());
            let lin = z.cross(&(pe - f[i].translation()));
            j.fixed_view_mut::<3, 1>(0, i).copy_from(&lin);
            j.fixed_view_mut::<3, 1>(3, i).copy_from(&z);
        }
        j
    }
}

/// Six Cartesian jog axes in the robot base frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
    Rx,
    Ry,
    Rz,
}

impl Axis {
    pub const ALL: [Axis; 6] = [Axis::X, Axis::Y, Axis::Z, Axis::Rx, Axis::Ry, Axis::Rz];

    pub fn is_rotation(self) -> bool {
        matches!(self, Axis::Rx | Axis::Ry | Axis::Rz)
    }

    pub fn unit(self) -> Vec3 {
        match self {
            Axis::X | Axis::Rx => Vec3::x(),
            Axis::Y | Axis::Ry => Vec3::y(),
            Axis::Z | Axis::Rz => Vec3::z(),
        }
    }
}

/// `delta` is mm for translations and degrees for rotations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JogCommand {
    pub axis: Axis,
    pub delta: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JogLimits {
    pub max_translation: f64,
    pub max_rotation_deg: f64,
    /// Largest accepted IK position residual, mm.
    pub max_residual: f64,
}

impl Default for JogLimits {
    fn default() -> Self {
        Self {
            max_translation: 5.0,
            max_rotation_deg: 2.0,
            max_residual: 0.1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub joints: Joints,
    /// `r_t_e`, always the forward kinematics of `joints`.
    pub end_effector: RigidTransform,
    pub timestamp: u64,
}

impl RobotState {
    pub fn new(kin: &Kinematics, joints: &[f64], timestamp: u64) -> Result<Self, KinematicsError> {
        let end_effector = kin.forward(joints)?;
        Ok(Self {
            joints: kin.check_limits(joints)?,
            end_effector,
            timestamp,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JogRejection {
    ExceedsCap,
    JointLimit,
    Unreachable,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JogOutcome {
    pub state: RobotState,
    pub rejected: Option<JogRejection>,
}

/// Pose error `[dp; dr]` taking `current` to `goal`, base frame.
fn pose_error(current: &RigidTransform, goal: &RigidTransform) -> Vector6<f64> {
    let dp = goal.translation() - current.translation();
    let dr = (goal.rotation() * current.rotation().inverse()).scaled_axis();
    Vector6::new(dp.x, dp.y, dp.z, dr.x, dr.y, dr.z)
}

/// Damped least-squares IK from `seed` towards `goal`. Returns the joints and
/// the final (position mm, rotation rad) residual.
pub fn solve_ik(kin: &Kinematics, seed: &Joints, goal: &RigidTransform) -> (Joints, f64, f64) {
    const LAMBDA: f64 = 1e-2;
    // Rotation error is weighted as if acting at this lever arm (mm).
    const ROT_SCALE: f64 = 100.0;
    let mut q = *seed;
    let mut res = (f64::INFINITY, f64::INFINITY);
    for _ in 0..100 {
        let e = pose_error(&kin.forward_unchecked(&q), goal);
        res = (e.fixed_rows::<3>(0).norm(), e.fixed_rows::<3>(3).norm());
        if res.0 < 1e-9 && res.1 < 1e-12 {
            break;
        }
        let mut j = kin.jacobian(&q);
        let mut e = e;
        for r in 3..6 {
            j.row_mut(r).scale_mut(ROT_SCALE);
            e[r] *= ROT_SCALE;
        }
        let jjt: Matrix6<f64> = j * j.transpose() + Matrix6::identity() * (LAMBDA * LAMBDA);
        let Some(y) = jjt.cholesky().map(|c| c.solve(&e)) else {
            break;
        };
        let dq = j.transpose() * y;
        for i in 0..DOF {
            q[i] += dq[i];
        }
    }
    (q, res.0, res.1)
}

/// Moves the end-effector by one jog command. Rotations turn about a base
/// axis through the current end-effector origin, so position is held.
pub fn jog(kin: &Kinematics, limits: &JogLimits, state: &RobotState, cmd: &JogCommand) -> JogOutcome {
    let reject = |why| JogOutcome {
        state: *state,
        rejected: Some(why),
    };
    let cap = if cmd.axis.is_rotation() {
        limits.max_rotation_deg
    } else {
        limits.max_translation
    };
    if !(cmd.delta.abs() <= cap) {
        return reject(JogRejection::ExceedsCap);
    }
    if cmd.delta == 0.0 {
        return JogOutcome {
            state: *state,
            rejected: None,
        };
    }
    let ee = state.end_effector;
    let goal = if cmd.axis.is_rotation() {
        let r = RigidTransform::from_axis_angle(&cmd.axis.unit(), cmd.delta.to_radians(), Vec3::zeros());
        RigidTransform::new(r.rotation() * ee.rotation(), *ee.translation())
    } else {
        RigidTransform::new(*ee.rotation(), ee.translation() + cmd.axis.unit() * cmd.delta)
    };
    move_to(kin, limits, state, &goal)
}

/// IK move to an absolute pose with the same acceptance rules as [`jog`].
pub fn move_to(kin: &Kinematics, limits: &JogLimits, state: &RobotState, goal: &RigidTransform) -> JogOutcome {
    let (q, pos_res, rot_res) = solve_ik(kin, &state.joints, goal);
    if kin.check_limits(&q).is_err() {
        return JogOutcome {
            state: *state,
            rejected: Some(JogRejection::JointLimit),
        };
    }
    // Rotation residual counts at a 100 mm lever arm.
    if !(pos_res.max(rot_res * 100.0) <= limits.max_residual) {
        return JogOutcome {
            state: *state,
            rejected: Some(JogRejection::Unreachable),
        };
    }
    JogOutcome {
        state: RobotState {
            joints: q,
            end_effector: kin.forward_unchecked(&q),
            timestamp: state.timestamp,
        },
        rejected: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_joints(rng: &mut ChaCha8Rng, kin: &Kinematics, frac: f64) -> Joints {
        std::array::from_fn(|i| rng.random_range(-1.0..1.0) * kin.rows[i].limit * frac)
    }

    pub(crate) const READY: Joints = [0.0, 0.6, 0.0, -1.2, 0.0, 0.9, 0.0];

    #[test]
    fn home_pose_is_straight_up() {
        let kin = Kinematics::default();
        let ee = kin.forward(&[0.0; DOF]).unwrap();
        assert!((ee.translation() - Vec3::new(0.0, 0.0, 1266.0)).norm() < 1e-9);
        assert!(ee.rotation().angle() < 1e-12);
    }

    #[test]
    fn first_joint_spins_about_base_axis() {
        let kin = Kinematics::default();
        let mut q = READY;
        let p0 = *kin.forward(&q).unwrap().translation();
        q[0] = 0.7;
        let p1 = *kin.forward(&q).unwrap().translation();
        let rotated = RigidTransform::from_axis_angle(&Vec3::z(), 0.7, Vec3::zeros()).apply_vector(&p0);
        assert!((p1 - rotated).norm() < 1e-9);
    }

    #[test]
    fn limits_are_enforced() {
        let kin = Kinematics::default();
        let mut q = [0.0; DOF];
        q[1] = 2.2;
        assert!(matches!(
            kin.forward(&q),
            Err(KinematicsError::JointLimit { joint: 1, .. })
        ));
        assert_eq!(kin.forward(&[0.0; 3]), Err(KinematicsError::WrongCount(3)));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let kin = Kinematics::default();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let h = 1e-5;
        for _ in 0..50 {
            let q = random_joints(&mut rng, &kin, 0.9);
            let j = kin.jacobian(&q);
            for i in 0..DOF {
                let mut qp = q;
                let mut qm = q;
                qp[i] += h;
                qm[i] -= h;
                let (fp, fm) = (kin.forward_unchecked(&qp), kin.forward_unchecked(&qm));
                let lin = (fp.translation() - fm.translation()) / (2.0 * h);
                let ang = ((fp.rotation() * fm.rotation().inverse()).scaled_axis()) / (2.0 * h);
                // Linear entries are in mm/rad, so compare relative to the column.
                let col = j.fixed_view::<3, 1>(0, i);
                assert!((lin - col).norm() < 1e-5 * col.norm().max(1.0), "joint {i}");
                assert!((ang - j.fixed_view::<3, 1>(3, i)).norm() < 1e-5);
            }
        }
    }

    fn ready(kin: &Kinematics) -> RobotState {
        RobotState::new(kin, &READY, 0).unwrap()
    }

    #[test]
    fn zero_jog_is_identity() {
        let kin = Kinematics::default();
        let s = ready(&kin);
        let out = jog(
            &kin,
            &JogLimits::default(),
            &s,
            &JogCommand {
                axis: Axis::Ry,
                delta: 0.0,
            },
        );
        assert_eq!(out.state, s);
        assert_eq!(out.rejected, None);
    }

    #[test]
    fn jog_round_trip_returns_to_start() {
        let kin = Kinematics::default();
        let lim = JogLimits::default();
        let s = ready(&kin);
        for axis in Axis::ALL {
            let there = jog(&kin, &lim, &s, &JogCommand { axis, delta: 1.0 });
            assert_eq!(there.rejected, None, "{axis:?}");
            let back = jog(&kin, &lim, &there.state, &JogCommand { axis, delta: -1.0 });
            assert_eq!(back.rejected, None);
            let (a, b) = (s.end_effector, back.state.end_effector);
            assert!(a.translation_distance(&b) < 1e-3 && a.angle_to(&b) < 1e-6, "{axis:?}");
        }
    }

    #[test]
    fn jog_moves_along_base_axes() {
        let kin = Kinematics::default();
        let lim = JogLimits::default();
        let s = ready(&kin);
        let out = jog(
            &kin,
            &lim,
            &s,
            &JogCommand {
                axis: Axis::Y,
                delta: 4.0,
            },
        );
        let d = out.state.end_effector.translation() - s.end_effector.translation();
        assert!((d - Vec3::new(0.0, 4.0, 0.0)).norm() < 1e-6);
        assert!(out.state.end_effector.angle_to(&s.end_effector) < 1e-9);

        let out = jog(
            &kin,
            &lim,
            &s,
            &JogCommand {
                axis: Axis::Rx,
                delta: 2.0,
            },
        );
        assert!(out.state.end_effector.translation_distance(&s.end_effector) < 1e-6);
        assert!((out.state.end_effector.angle_to(&s.end_effector) - 2f64.to_radians()).abs() < 1e-9);
    }

    #[test]
    fn jog_rejections_leave_state_unchanged() {
        let kin = Kinematics::default();
        let lim = JogLimits::default();
        let s = ready(&kin);
        let out = jog(
            &kin,
            &lim,
            &s,
            &JogCommand {
                axis: Axis::X,
                delta: 6.0,
            },
        );
        assert_eq!((out.state, out.rejected), (s, Some(JogRejection::ExceedsCap)));

        // Joint 2 pressed against its limit: pushing further must be refused.
        let mut q = READY;
        q[1] = kin.rows[1].limit - 1e-4;
        let edge = RobotState::new(&kin, &q, 0).unwrap();
        let mut rejected = None;
        let mut cur = edge;
        for _ in 0..200 {
            let out = jog(
                &kin,
                &lim,
                &cur,
                &JogCommand {
                    axis: Axis::X,
                    delta: 5.0,
                },
            );
            if let Some(r) = out.rejected {
                assert_eq!(out.state, cur);
                rejected = Some(r);
                break;
            }
            cur = out.state;
        }
        assert!(rejected.is_some());
    }
}
