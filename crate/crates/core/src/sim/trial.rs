//! Building blocks of a simulated procedure: calibration motion, depth
//! capture for registration, aiming, needle insertion and error metrics.

use rand::Rng;

use crate::calibration::{derive_ct_robot, evaluate_tre, solve_handeye, CalibrationError, HandEyeSolution, PosePair};
use crate::geometry::{Aabb, PointCloud};
use crate::registration::{register_robot, RegistrationError, RegistrationParams, RegistrationResult};
use crate::transform::{FrameId, GraphError, Point3, RigidTransform, TransformGraph, Vec3};

use super::kinematics::{Axis, JogCommand, JogLimits, Joints, RobotState, DOF};
use super::observe::{fiducials_ct, observe_depth, observe_fiducials, observe_tracker, stream};
use super::robot::{NeedleGuide, VirtualRobot};
use super::scenario::Scenario;
use super::spine::Target;

const CALIBRATION_MOTION: u64 = 0x6361_6c69_6200_0000;

/// Largest joint offset of a calibration pose from the starting pose, rad.
pub const CALIBRATION_SPREAD: f64 = 0.5;

/// Joint configurations visited to collect hand-eye pairs: random offsets
/// around `around`, clamped to 95% of each joint limit.
pub fn calibration_poses(scenario: &Scenario, around: &Joints, n: usize, index: u64) -> Vec<Joints> {
    let kin = &scenario.robot.kinematics;
    let mut rng = stream(scenario.seed(), CALIBRATION_MOTION, index);
    (0..n)
        .map(|_| {
            let mut q = *around;
            for (j, row) in kin.rows.iter().enumerate().take(DOF) {
                let lim = 0.95 * row.limit;
                q[j] = (q[j] + rng.random_range(-CALIBRATION_SPREAD..=CALIBRATION_SPREAD)).clamp(-lim, lim);
            }
            q
        })
        .collect()
}

/// Pose pair recorded at one calibration pose.
pub fn pose_pair(scenario: &Scenario, state: &RobotState, tracker_index: u64, index: usize) -> PosePair {
    PosePair::new(
        state.end_effector.inverse(),
        observe_tracker(scenario, state, tracker_index),
        index,
    )
}

/// Runs a full hand-eye calibration around `start`. Tracker draws use
/// indices `tracker_base..tracker_base + n`.
pub fn calibrate(
    scenario: &Scenario,
    start: &RobotState,
    n: usize,
    index: u64,
    tracker_base: u64,
) -> Result<HandEyeSolution, CalibrationError> {
    let kin = &scenario.robot.kinematics;
    let pairs: Vec<PosePair> = calibration_poses(scenario, &start.joints, n, index)
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let st = RobotState::new(kin, q, start.timestamp).expect("clamped inside limits");
            pose_pair(scenario, &st, tracker_base + i as u64, i)
        })
        .collect();
    solve_handeye(&pairs)
}

/// Box around the physical robot used to crop depth frames.
pub fn robot_box(scenario: &Scenario, state: &RobotState) -> Aabb {
    scenario
        .robot
        .posed(&state.joints, &RigidTransform::identity(), FrameId::RobotBase)
        .bounds()
        .padded(50.0)
}

/// One depth frame per configured viewpoint.
pub fn capture_depth(scenario: &Scenario, state: &RobotState, index_base: u64) -> Vec<PointCloud> {
    scenario
        .config
        .viewpoints
        .iter()
        .enumerate()
        .map(|(i, vp)| observe_depth(scenario, state, vp, index_base + i as u64))
        .collect()
}

/// Registers the virtual robot against captured frames and publishes `V -> R`.
pub fn register_frames(
    scenario: &Scenario,
    state: &RobotState,
    frames: &[PointCloud],
    params: &RegistrationParams,
    graph: &mut TransformGraph,
    timestamp: u64,
) -> Result<RegistrationResult, RegistrationError> {
    let model = VirtualRobot {
        model: &scenario.robot,
        v_t_r: scenario.truth().v_t_r,
    };
    register_robot(
        frames,
        &robot_box(scenario, state),
        &model,
        &state.joints,
        params,
        graph,
        timestamp,
    )
}

/// Needle tip after advancing `depth` mm through the true guide, frame R.
pub fn simulate_insertion(scenario: &Scenario, state: &RobotState, depth: f64) -> Point3 {
    state.end_effector.apply_point(&scenario.truth().guide.at(depth))
}

/// Distance in the spine frame between a tip and a target.
pub fn placement_error(
    tip: &Point3,
    tip_frame: FrameId,
    target: &Target,
    graph: &TransformGraph,
) -> Result<f64, GraphError> {
    let s_t_tip = graph.query(FrameId::Spine, tip_frame)?;
    Ok((s_t_tip.apply_point(tip) - target.position).norm())
}

/// End-effector pose that puts the guide origin `standoff` mm before
/// `target_r` with the guide pointing straight down (-z of the base). The
/// roll about the guide axis is kept from `current`.
pub fn aim_pose(guide: &NeedleGuide, target_r: &Point3, standoff: f64, current: &RigidTransform) -> RigidTransform {
    let down = -Vec3::z();
    let d = current.apply_vector(&guide.direction.normalize());
    let align = nalgebra::UnitQuaternion::rotation_between(&d, &down)
        .unwrap_or_else(|| nalgebra::UnitQuaternion::from_axis_angle(&Vec3::x_axis(), std::f64::consts::PI));
    let rotation = align * current.rotation();
    let origin = target_r - down * standoff;
    let r = RigidTransform::new(rotation, Vec3::zeros());
    RigidTransform::new(rotation, origin.coords - r.apply_vector(&guide.origin.coords))
}

/// How a scripted operator turns a pose error into jog commands.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum Operator {
    /// Jogs at up to the per-tick cap and finishes with exact fractional
    /// moves; the aim converges to numerical precision.
    Exact,
    /// A gamepad: every jog is a fixed step, and the operator stops once
    /// the remaining error on each axis is under half a step. Insertion depth
    /// is read off whole-millimetre needle markings.
    Gamepad { step_mm: f64, step_deg: f64 },
}

impl Operator {
    /// Jogs for one tick, or nothing when the aim is settled.
    pub fn jogs(&self, current: &RigidTransform, goal: &RigidTransform, limits: &JogLimits) -> Vec<JogCommand> {
        let dp = goal.translation() - current.translation();
        let dr = (goal.rotation() * current.rotation().inverse()).scaled_axis();
        let mut out = Vec::new();
        for axis in Axis::ALL {
            let i = axis as usize % 3;
            let (err, cap, step, settle) = match (self, axis.is_rotation()) {
                (Operator::Exact, false) => (dp[i], limits.max_translation, None, 1e-6),
                (Operator::Exact, true) => (dr[i].to_degrees(), limits.max_rotation_deg, None, 1e-7),
                (Operator::Gamepad { step_mm, .. }, false) => {
                    (dp[i], limits.max_translation, Some(*step_mm), step_mm / 2.0)
                }
                (Operator::Gamepad { step_deg, .. }, true) => (
                    dr[i].to_degrees(),
                    limits.max_rotation_deg,
                    Some(*step_deg),
                    step_deg / 2.0,
                ),
            };
            if err.abs() <= settle {
                continue;
            }
            let delta = match step {
                Some(s) => s.min(cap).copysign(err),
                None => err.clamp(-cap, cap),
            };
            out.push(JogCommand { axis, delta });
        }
        out
    }

    pub fn depth(&self, planned: f64) -> f64 {
        match self {
            Operator::Exact => planned,
            Operator::Gamepad { .. } => planned.round(),
        }
    }
}

/// Target position in the robot base as the navigation graph believes it.
pub fn target_in_base(target: &Target, graph: &TransformGraph) -> Result<Point3, GraphError> {
    Ok(graph
        .query(FrameId::RobotBase, FrameId::Spine)?
        .apply_point(&target.position))
}

/// Depth along the estimated guide at which the tip reaches the estimated target.
pub fn planned_depth(guide: &NeedleGuide, r_t_e: &RigidTransform, target_r: &Point3) -> f64 {
    let o = r_t_e.apply_point(&guide.origin);
    let d = r_t_e.apply_vector(&guide.direction.normalize());
    (target_r - o).dot(&d)
}

/// One fiducial evaluation: calibrate, derive `c_t_r`, map located
/// fiducials into the CBCT frame and report the RMS distance (mm).
pub fn tre_trial(scenario: &Scenario, index: u64) -> Result<f64, CalibrationError> {
    let start = scenario.start_state();
    let n = scenario.config.calibration_pairs;
    let sol = calibrate(scenario, &start, n, index, index * n as u64)?;
    let mut graph = TransformGraph::new();
    graph.insert(
        FrameId::Cbct,
        FrameId::RobotBase,
        derive_ct_robot(&sol, &scenario.truth().c_t_o),
        0,
    )?;
    evaluate_tre(&graph, &fiducials_ct(scenario), &observe_fiducials(scenario, index))
}
