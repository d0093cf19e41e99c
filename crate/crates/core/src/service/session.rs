use std::sync::Arc;

use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{solve_handeye, HandEyeSolution, PosePair};
use crate::geometry::PointCloud;
use crate::guidance::{predict_hit, HitResult};
use crate::io::write_stl_binary;
use crate::registration::RegistrationParams;
use crate::sim::{
    calibration_poses, estimated_guide, jog, observe_depth, observe_tracker, placement_error, pose_pair,
    register_frames, simulate_insertion, Axis, JogCommand, JogLimits, JogRejection, Joints, NeedleGuide, RobotState,
    Scenario, TargetKind,
};
use crate::transform::{EdgeRecord, FrameId, Point3, TransformGraph};

pub const PROTOCOL_VERSION: u32 = 1;
pub const DEFAULT_TICK_RATE: f64 = 30.0;
/// Deepest accepted insertion, mm.
pub const MAX_INSERTION_DEPTH: f64 = 300.0;
/// Most calibration poses one request may ask for.
pub const MAX_CALIBRATION_PAIRS: usize = 500;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Idle,
    Calibrating,
    Registering,
    Guiding,
    TrialRunning,
    TrialComplete,
}

/// Operator and harness requests. Applied at the next tick, in arrival order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case")]
pub enum Command {
    /// `delta` in mm for x/y/z and degrees for rx/ry/rz.
    Jog {
        axis: Axis,
        delta: f64,
    },
    StartCalibration {
        n_pairs: usize,
    },
    StartRegistration {
        #[serde(default)]
        params: RegistrationParams,
    },
    SetTarget {
        id: String,
    },
    StartTrial,
    Insert {
        depth: f64,
    },
    EndTrial,
    GetMesh,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Jog { .. } => "jog",
            Command::StartCalibration { .. } => "start_calibration",
            Command::StartRegistration { .. } => "start_registration",
            Command::SetTarget { .. } => "set_target",
            Command::StartTrial => "start_trial",
            Command::Insert { .. } => "insert",
            Command::EndTrial => "end_trial",
            Command::GetMesh => "get_mesh",
        }
    }

    /// Phases in which the command is accepted.
    pub fn allowed_in(&self) -> &'static [Phase] {
        use Phase::*;
        match self {
            Command::Jog { .. } => &[Idle, Guiding, TrialRunning, TrialComplete],
            Command::StartCalibration { .. } | Command::StartRegistration { .. } | Command::SetTarget { .. } => {
                &[Idle, Guiding, TrialComplete]
            }
            Command::StartTrial => &[Guiding, TrialComplete],
            Command::Insert { .. } | Command::EndTrial => &[TrialRunning],
            Command::GetMesh => &[Idle, Calibrating, Registering, Guiding, TrialRunning, TrialComplete],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum CommandError {
    #[error("{command} is not allowed in phase {phase:?}")]
    IllegalPhase { command: &'static str, phase: Phase },
    #[error("unknown target '{0}'")]
    UnknownTarget(String),
    #[error("{0}")]
    BadParams(String),
}

impl CommandError {
    pub fn code(&self) -> &'static str {
        match self {
            CommandError::IllegalPhase { .. } => "IllegalPhase",
            CommandError::UnknownTarget(_) => "UnknownTarget",
            CommandError::BadParams(_) => "BadParams",
        }
    }

    pub fn body(&self) -> ErrorBody {
        ErrorBody {
            code: self.code().into(),
            message: self.to_string(),
        }
    }
}

/// Wire form of an error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

/// Successful outcome of a command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Reply {
    Accepted,
    /// A jog the kinematics refused leaves the robot where it was.
    Jogged {
        #[serde(default)]
        rejected: Option<JogRejection>,
    },
    Mesh {
        frame: FrameId,
        /// Binary STL, base64.
        stl_base64: String,
    },
    Inserted {
        /// True tip position, robot base frame.
        tip: Point3,
        placement_error_mm: f64,
    },
    TrialRecorded {
        record: TrialRecord,
    },
}

/// One line of the trial log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialRecord {
    pub target_id: Option<String>,
    pub kind: Option<TargetKind>,
    pub elapsed_ms: u64,
    pub placement_error_mm: Option<f64>,
    /// Commands accepted between `start_trial` and `end_trial`.
    pub command_count: u64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub elapsed_ms: u64,
    pub last_placement_error_mm: Option<f64>,
    pub calibration: Option<HandEyeSolution>,
    pub registration_rmse_mm: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobProgress {
    pub done: usize,
    pub total: usize,
}

/// Everything a client needs to draw one tick. Immutable once built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub tick: u64,
    pub phase: Phase,
    pub robot: RobotState,
    /// Estimated navigation graph.
    pub graph: Vec<EdgeRecord>,
    /// Predicted needle contact, spine frame.
    pub hit: HitResult,
    /// Needle guide as calibrated, end-effector frame.
    pub guide: NeedleGuide,
    pub target: Option<String>,
    /// Active target, spine frame.
    pub target_position: Option<Point3>,
    pub trial_clock_ms: u64,
    pub metrics: Metrics,
    pub job: Option<JobProgress>,
    /// Outcome of the last calibration or registration when it failed.
    pub notice: Option<String>,
}

enum Job {
    Calibration {
        poses: Vec<Joints>,
        pairs: Vec<PosePair>,
        home: RobotState,
    },
    Registration {
        params: RegistrationParams,
        frames: Vec<PointCloud>,
    },
}

#[derive(Clone, Debug, Default)]
struct TrialClock {
    ticks: u64,
    commands: u64,
    error: Option<f64>,
}

// Tracker draws interleave: even indices for the live marker edge, odd for
// calibration pairs.
fn live_tracker_index(tick: u64) -> u64 {
    2 * tick
}

fn calibration_tracker_index(draw: u64) -> u64 {
    2 * draw + 1
}

/// Index block of depth frames for the n-th registration.
const DEPTH_BLOCK: u64 = 1 << 20;

/// The simulation state owned by the loop thread. All mutation goes through
/// [`Session::apply`] and [`Session::step`].
pub struct Session {
    scenario: Arc<Scenario>,
    tick_rate: f64,
    tick: u64,
    phase: Phase,
    robot: RobotState,
    graph: TransformGraph,
    guide: NeedleGuide,
    hit: HitResult,
    target: Option<String>,
    trial: TrialClock,
    last_error_mm: Option<f64>,
    calibration: Option<HandEyeSolution>,
    registration_rmse: Option<f64>,
    job: Option<Job>,
    calibrations: u64,
    registrations: u64,
    tracker_draws: u64,
    notice: Option<String>,
    limits: JogLimits,
}

impl Session {
    pub fn new(scenario: Arc<Scenario>, tick_rate: f64) -> Self {
        let truth = *scenario.truth();
        let robot = scenario.start_state();
        let mut graph = TransformGraph::new();
        for (a, b, t) in [
            (FrameId::Cbct, FrameId::OpticalCamera, truth.c_t_o),
            (FrameId::Spine, FrameId::Cbct, truth.s_t_c),
            (FrameId::VirtualWorld, FrameId::Viewer, truth.v_t_h),
            (FrameId::EndEffector, FrameId::Ultrasound, truth.e_t_u),
        ] {
            graph.insert(a, b, t, 0).expect("distinct frames");
        }
        let mut s = Self {
            guide: estimated_guide(&scenario),
            scenario,
            tick_rate,
            tick: 0,
            phase: Phase::Idle,
            robot,
            graph,
            hit: HitResult::miss(),
            target: None,
            trial: TrialClock::default(),
            last_error_mm: None,
            calibration: None,
            registration_rmse: None,
            job: None,
            calibrations: 0,
            registrations: 0,
            tracker_draws: 0,
            notice: None,
            limits: JogLimits::default(),
        };
        s.refresh();
        s
    }

    pub fn scenario(&self) -> &Arc<Scenario> {
        &self.scenario
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn tick_rate(&self) -> f64 {
        self.tick_rate
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn robot(&self) -> &RobotState {
        &self.robot
    }

    pub fn graph(&self) -> &TransformGraph {
        &self.graph
    }

    pub fn guide(&self) -> &NeedleGuide {
        &self.guide
    }

    pub fn jog_limits(&self) -> &JogLimits {
        &self.limits
    }

    pub fn target(&self) -> Option<&str> {
        self.target.as_deref()
    }

    pub fn notice(&self) -> Option<&str> {
        self.notice.as_deref()
    }

    fn elapsed_ms(&self) -> u64 {
        (self.trial.ticks as f64 * 1000.0 / self.tick_rate).round() as u64
    }

    /// Executes one command against the current state. A rejected command
    /// leaves the state untouched.
    pub fn apply(&mut self, cmd: &Command) -> Result<Reply, CommandError> {
        if !cmd.allowed_in().contains(&self.phase) {
            return Err(CommandError::IllegalPhase {
                command: cmd.name(),
                phase: self.phase,
            });
        }
        let reply = match cmd {
            Command::Jog { axis, delta } => self.jog(*axis, *delta)?,
            Command::StartCalibration { n_pairs } => self.start_calibration(*n_pairs)?,
            Command::StartRegistration { params } => self.start_registration(params)?,
            Command::SetTarget { id } => {
                if self.scenario.target(id).is_none() {
                    return Err(CommandError::UnknownTarget(id.clone()));
                }
                self.target = Some(id.clone());
                self.phase = Phase::Guiding;
                Reply::Accepted
            }
            Command::StartTrial => {
                self.trial = TrialClock::default();
                self.phase = Phase::TrialRunning;
                return Ok(Reply::Accepted);
            }
            Command::Insert { depth } => self.insert(*depth)?,
            Command::EndTrial => {
                self.phase = Phase::TrialComplete;
                return Ok(Reply::TrialRecorded {
                    record: self.current_record(),
                });
            }
            Command::GetMesh => {
                let mut stl = Vec::new();
                write_stl_binary(&self.scenario.spine_mesh, &mut stl)
                    .map_err(|e| CommandError::BadParams(e.to_string()))?;
                Reply::Mesh {
                    frame: self.scenario.spine_mesh.frame(),
                    stl_base64: base64::engine::general_purpose::STANDARD.encode(stl),
                }
            }
        };
        if self.phase == Phase::TrialRunning {
            self.trial.commands += 1;
        }
        self.refresh();
        Ok(reply)
    }

    fn jog(&mut self, axis: Axis, delta: f64) -> Result<Reply, CommandError> {
        if !delta.is_finite() {
            return Err(CommandError::BadParams("jog delta must be finite".into()));
        }
        let out = jog(
            &self.scenario.robot.kinematics,
            &self.limits,
            &self.robot,
            &JogCommand { axis, delta },
        );
        if out.rejected == Some(JogRejection::ExceedsCap) {
            let (cap, unit) = if axis.is_rotation() {
                (self.limits.max_rotation_deg, "deg")
            } else {
                (self.limits.max_translation, "mm")
            };
            return Err(CommandError::BadParams(format!(
                "jog delta {delta} exceeds {cap} {unit}"
            )));
        }
        self.robot = out.state;
        Ok(Reply::Jogged { rejected: out.rejected })
    }

    fn start_calibration(&mut self, n: usize) -> Result<Reply, CommandError> {
        if !(3..=MAX_CALIBRATION_PAIRS).contains(&n) {
            return Err(CommandError::BadParams(format!(
                "n_pairs must be in 3..={MAX_CALIBRATION_PAIRS}, got {n}"
            )));
        }
        let poses = calibration_poses(&self.scenario, &self.robot.joints, n, self.calibrations);
        self.calibrations += 1;
        self.job = Some(Job::Calibration {
            poses,
            pairs: Vec::with_capacity(n),
            home: self.robot,
        });
        self.phase = Phase::Calibrating;
        Ok(Reply::Accepted)
    }

    fn start_registration(&mut self, params: &RegistrationParams) -> Result<Reply, CommandError> {
        let p = params;
        let positive = [
            p.voxel,
            p.global.rigidity_tol,
            p.global.inlier_tol,
            p.global.descriptor_radius,
        ];
        if !positive.iter().all(|v| v.is_finite() && *v > 0.0)
            || p.virtual_count == 0
            || !(0.0..1.0).contains(&p.icp.trim_fraction)
        {
            return Err(CommandError::BadParams("registration parameters out of range".into()));
        }
        self.job = Some(Job::Registration {
            params: params.clone(),
            frames: Vec::new(),
        });
        self.registrations += 1;
        self.phase = Phase::Registering;
        Ok(Reply::Accepted)
    }

    fn insert(&mut self, depth: f64) -> Result<Reply, CommandError> {
        if !(0.0..=MAX_INSERTION_DEPTH).contains(&depth) {
            return Err(CommandError::BadParams(format!(
                "insertion depth must be in [0, {MAX_INSERTION_DEPTH}] mm, got {depth}"
            )));
        }
        let target = self.active_target().expect("a running trial has a target");
        let tip = simulate_insertion(&self.scenario, &self.robot, depth);
        let truth = self.scenario.truth().graph(&self.robot);
        let err = placement_error(&tip, FrameId::RobotBase, target, &truth).expect("truth graph is connected");
        self.trial.error = Some(err);
        self.last_error_mm = Some(err);
        Ok(Reply::Inserted {
            tip,
            placement_error_mm: err,
        })
    }

    fn active_target(&self) -> Option<&crate::sim::Target> {
        self.target.as_deref().and_then(|id| self.scenario.target(id))
    }

    /// The record `end_trial` would write now.
    pub fn current_record(&self) -> TrialRecord {
        let target = self.active_target();
        TrialRecord {
            target_id: target.map(|t| t.id.clone()),
            kind: target.map(|t| t.kind),
            elapsed_ms: self.elapsed_ms(),
            placement_error_mm: self.trial.error,
            command_count: self.trial.commands,
            seed: self.scenario.seed(),
        }
    }

    /// Advances the simulation by one tick.
    pub fn step(&mut self) {
        if let Some(job) = self.job.take() {
            self.job = self.advance(job);
            if self.job.is_none() {
                self.phase = if self.target.is_some() {
                    Phase::Guiding
                } else {
                    Phase::Idle
                };
            }
        }
        if self.phase == Phase::TrialRunning {
            self.trial.ticks += 1;
        }
        self.tick += 1;
        self.robot.timestamp = self.tick;
        self.refresh();
    }

    /// One unit of background work; `None` once the job has finished.
    fn advance(&mut self, job: Job) -> Option<Job> {
        match job {
            Job::Calibration { poses, mut pairs, home } => {
                if let Some(q) = poses.get(pairs.len()) {
                    let kin = &self.scenario.robot.kinematics;
                    self.robot = RobotState::new(kin, q, self.tick).expect("calibration poses respect limits");
                    let index = calibration_tracker_index(self.tracker_draws);
                    self.tracker_draws += 1;
                    pairs.push(pose_pair(&self.scenario, &self.robot, index, pairs.len()));
                    return Some(Job::Calibration { poses, pairs, home });
                }
                self.robot = home;
                match solve_handeye(&pairs) {
                    Ok(sol) => {
                        self.graph
                            .insert(FrameId::RobotBase, FrameId::OpticalCamera, sol.x, self.tick)
                            .expect("distinct frames");
                        self.calibration = Some(sol);
                        self.notice = None;
                    }
                    Err(e) => self.notice = Some(format!("calibration failed: {e}")),
                }
                None
            }
            Job::Registration { params, mut frames } => {
                let viewpoints = &self.scenario.config.viewpoints;
                if let Some(vp) = viewpoints.get(frames.len()) {
                    let index = (self.registrations - 1) * DEPTH_BLOCK + frames.len() as u64;
                    frames.push(observe_depth(&self.scenario, &self.robot, vp, index));
                    return Some(Job::Registration { params, frames });
                }
                let scenario = Arc::clone(&self.scenario);
                match register_frames(&scenario, &self.robot, &frames, &params, &mut self.graph, self.tick) {
                    Ok(r) => {
                        self.registration_rmse = Some(r.rmse);
                        self.notice = None;
                    }
                    Err(e) => self.notice = Some(format!("registration failed: {e}")),
                }
                None
            }
        }
    }

    /// Live edges and the predicted hit for the current robot pose.
    fn refresh(&mut self) {
        let marker = observe_tracker(&self.scenario, &self.robot, live_tracker_index(self.tick));
        for (a, b, t) in [
            (FrameId::RobotBase, FrameId::EndEffector, self.robot.end_effector),
            (FrameId::OpticalCamera, FrameId::Marker, marker),
        ] {
            self.graph.insert(a, b, t, self.tick).expect("distinct frames");
        }
        self.hit = predict_hit(
            &self.guide.origin,
            &self.guide.direction,
            &self.graph,
            &self.scenario.spine_mesh,
        )
        .unwrap_or_else(|_| HitResult::miss());
    }

    pub fn snapshot(&self) -> StateSnapshot {
        // The solve is the last step of either job.
        let job = self.job.as_ref().map(|j| match j {
            Job::Calibration { poses, pairs, .. } => JobProgress {
                done: pairs.len(),
                total: poses.len() + 1,
            },
            Job::Registration { frames, .. } => JobProgress {
                done: frames.len(),
                total: self.scenario.config.viewpoints.len() + 1,
            },
        });
        StateSnapshot {
            tick: self.tick,
            phase: self.phase,
            robot: self.robot,
            graph: self.graph.records(),
            hit: self.hit,
            guide: self.guide,
            target: self.target.clone(),
            target_position: self.active_target().map(|t| t.position),
            trial_clock_ms: self.elapsed_ms(),
            metrics: Metrics {
                elapsed_ms: self.elapsed_ms(),
                last_placement_error_mm: self.last_error_mm,
                calibration: self.calibration,
                registration_rmse_mm: self.registration_rmse,
            },
            job,
            notice: self.notice.clone(),
        }
    }

    /// Broken session invariants, if any.
    pub fn check_invariants(&self) -> Result<(), String> {
        let needs_target = matches!(self.phase, Phase::Guiding | Phase::TrialRunning | Phase::TrialComplete);
        if needs_target && self.active_target().is_none() {
            return Err(format!("{:?} without an active target", self.phase));
        }
        let job_ok = match (&self.job, self.phase) {
            (Some(Job::Calibration { .. }), Phase::Calibrating) => true,
            (Some(Job::Registration { .. }), Phase::Registering) => true,
            (None, p) => !matches!(p, Phase::Calibrating | Phase::Registering),
            _ => false,
        };
        if !job_ok {
            return Err(format!("background job does not match phase {:?}", self.phase));
        }
        if self.scenario.robot.kinematics.check_limits(&self.robot.joints).is_err() {
            return Err("robot outside joint limits".into());
        }
        Ok(())
    }
}
