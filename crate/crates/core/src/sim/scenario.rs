//! Scenario definition: phantom, ground-truth frame layout, sensor noise and
//! targets. Immutable once loaded.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Aabb, TriangleMesh};
use crate::io::{load_mesh, IoError};
use crate::transform::{FrameId, Point3, RigidTransform, TransformGraph, Vec3};

use super::kinematics::{Joints, RobotState};
use super::robot::{NeedleGuide, RobotModel};
use super::spine::{lumbar_phantom, phantom_targets, Target};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Noise {
    /// Tracker translation noise per axis, mm.
    pub tracker_sigma_mm: f64,
    /// Tracker rotation noise: error angle about a random axis, degrees.
    pub tracker_sigma_deg: f64,
    /// Depth noise along each view ray, mm.
    pub depth_sigma_mm: f64,
    /// Fraction of each depth frame that is clutter.
    pub outlier_fraction: f64,
    /// Error of the estimated needle-guide origin per axis, mm.
    pub guide_sigma_mm: f64,
    /// Tilt of the estimated needle-guide axis, degrees.
    pub guide_sigma_deg: f64,
    /// Fiducial localization error per axis in the robot frame, mm.
    pub localization_sigma_mm: f64,
}

impl Default for Noise {
    fn default() -> Self {
        Self::zero()
    }
}

impl Noise {
    pub fn zero() -> Self {
        Self {
            tracker_sigma_mm: 0.0,
            tracker_sigma_deg: 0.0,
            depth_sigma_mm: 0.0,
            outlier_fraction: 0.0,
            guide_sigma_mm: 0.0,
            guide_sigma_deg: 0.0,
            localization_sigma_mm: 0.0,
        }
    }

    /// Sensor noise at the scale reported for the physical setup: optical
    /// tracking, a commodity depth sensor with heavy clutter, and a probe
    /// calibration good to roughly half a millimetre.
    pub fn study() -> Self {
        Self {
            tracker_sigma_mm: 0.3,
            tracker_sigma_deg: 0.05,
            depth_sigma_mm: 3.0,
            outlier_fraction: 0.3,
            guide_sigma_mm: 0.4,
            guide_sigma_deg: 0.25,
            localization_sigma_mm: 0.4,
        }
    }

    fn check(&self, out: &mut Vec<String>) {
        let fields = [
            ("tracker_sigma_mm", self.tracker_sigma_mm),
            ("tracker_sigma_deg", self.tracker_sigma_deg),
            ("depth_sigma_mm", self.depth_sigma_mm),
            ("guide_sigma_mm", self.guide_sigma_mm),
            ("guide_sigma_deg", self.guide_sigma_deg),
            ("localization_sigma_mm", self.localization_sigma_mm),
        ];
        for (name, v) in fields {
            if !(v >= 0.0 && v.is_finite()) {
                out.push(format!("noise.{name} must be a finite non-negative number, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            out.push(format!(
                "noise.outlier_fraction must be in [0, 1), got {}",
                self.outlier_fraction
            ));
        }
    }
}

/// True values of every transform the pipeline estimates or is given.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruth {
    /// Hand-eye unknown: optical camera in the robot base.
    pub r_t_o: RigidTransform,
    /// CBCT intrinsic: camera in the CBCT volume.
    pub c_t_o: RigidTransform,
    /// Patient (spine mesh) frame from the CBCT volume.
    pub s_t_c: RigidTransform,
    /// Tracked marker on the probe holder.
    pub e_t_m: RigidTransform,
    /// Ultrasound image plane on the probe holder.
    pub e_t_u: RigidTransform,
    /// Registration unknown: robot base in the virtual world.
    pub v_t_r: RigidTransform,
    /// Display pose in the virtual world.
    pub v_t_h: RigidTransform,
    pub guide: NeedleGuide,
}

fn rot(axis: [f64; 3], deg: f64, t: [f64; 3]) -> RigidTransform {
    RigidTransform::from_axis_angle(&Vec3::from(axis), deg.to_radians(), Vec3::from(t))
}

impl Default for GroundTruth {
    /// Phantom on a table in front of the arm, camera about a metre away.
    fn default() -> Self {
        let r_t_s = rot([0.0, 0.0, 1.0], 3.0, [650.0, 0.0, 200.0]);
        let r_t_o = rot([0.3, 0.2, 1.0], 115.0, [300.0, -900.0, 400.0]);
        let c_t_o = rot([1.0, 0.5, 0.2], 40.0, [120.0, -40.0, 900.0]);
        Self {
            r_t_o,
            c_t_o,
            s_t_c: r_t_s.inverse().compose(&r_t_o).compose(&c_t_o.inverse()),
            e_t_m: rot([0.0, 0.0, 1.0], 30.0, [-30.0, 70.0, 150.0]),
            e_t_u: rot([1.0, 0.0, 0.0], 90.0, [0.0, 0.0, 246.0]),
            v_t_r: rot([0.1, -0.2, 1.0], 35.0, [-400.0, 250.0, -150.0]),
            v_t_h: rot([0.0, 1.0, 0.0], 17.0, [100.0, 1600.0, 200.0]),
            guide: NeedleGuide::default(),
        }
    }
}

impl GroundTruth {
    pub fn r_t_c(&self) -> RigidTransform {
        self.r_t_o.compose(&self.c_t_o.inverse())
    }

    pub fn r_t_s(&self) -> RigidTransform {
        self.r_t_c().compose(&self.s_t_c.inverse())
    }

    /// True marker pose seen by the camera for an end-effector pose.
    pub fn o_t_m(&self, r_t_e: &RigidTransform) -> RigidTransform {
        self.r_t_o.inverse().compose(r_t_e).compose(&self.e_t_m)
    }

    /// The full true frame graph for one robot state.
    pub fn graph(&self, state: &RobotState) -> TransformGraph {
        let ts = state.timestamp;
        let u_t_r = state.end_effector.compose(&self.e_t_u).inverse();
        let mut g = TransformGraph::new();
        for (a, b, t) in [
            (FrameId::RobotBase, FrameId::OpticalCamera, self.r_t_o),
            (FrameId::Cbct, FrameId::OpticalCamera, self.c_t_o),
            (FrameId::Spine, FrameId::Cbct, self.s_t_c),
            (FrameId::EndEffector, FrameId::RobotBase, state.end_effector.inverse()),
            (FrameId::EndEffector, FrameId::Marker, self.e_t_m),
            (FrameId::Ultrasound, FrameId::RobotBase, u_t_r),
            (FrameId::VirtualWorld, FrameId::RobotBase, self.v_t_r),
            (FrameId::VirtualWorld, FrameId::Viewer, self.v_t_h),
        ] {
            g.insert(a, b, t, ts).expect("distinct frames");
        }
        g
    }
}

/// Pinhole depth sensor. The camera looks along its +z with +y down.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DepthCamera {
    pub width: u32,
    pub height: u32,
    /// Horizontal field of view, degrees.
    pub fov_deg: f64,
}

impl Default for DepthCamera {
    fn default() -> Self {
        Self {
            width: 200,
            height: 150,
            fov_deg: 60.0,
        }
    }
}

/// Pose of a camera at `eye` looking at `target`, with image-up close to `up`.
pub fn look_at(eye: Point3, target: Point3, up: Vec3) -> RigidTransform {
    let z = (target - eye).normalize();
    let x = z.cross(&up).normalize();
    let y = z.cross(&x);
    let m = nalgebra::Matrix3::from_columns(&[x, y, z]);
    RigidTransform::from_matrix_parts(&m, eye.coords)
}

fn default_viewpoints() -> Vec<RigidTransform> {
    let target = Point3::new(300.0, 0.0, 450.0);
    [
        Point3::new(1700.0, -1100.0, 1200.0),
        Point3::new(1700.0, 1100.0, 1200.0),
        Point3::new(-500.0, -1700.0, 1100.0),
        Point3::new(-500.0, 1700.0, 1100.0),
    ]
    .into_iter()
    .map(|eye| look_at(eye, target, Vec3::z()))
    .collect()
}

fn default_scene_box() -> Aabb {
    Aabb::new(Point3::new(-800.0, -1000.0, 0.0), Point3::new(1400.0, 1000.0, 1600.0)).unwrap()
}

/// Ready pose with the guide pointing down at the table. The waist and
/// forearm are turned so the arm is not planar; a planar arm is nearly
/// symmetric under a half turn about its own length.
pub const START_JOINTS: Joints = [0.3, 0.6, 0.25, -1.2, 0.3, 0.9, 0.0];

fn default_fiducials() -> Vec<Point3> {
    // Beads in the container walls around the spine.
    let mut out = Vec::new();
    for (x, y, z) in [
        (-90.0, -130.0, -60.0),
        (90.0, -130.0, -40.0),
        (-90.0, 130.0, -40.0),
        (90.0, 130.0, -60.0),
        (0.0, -140.0, 40.0),
        (0.0, 140.0, 40.0),
        (-100.0, 0.0, 30.0),
        (100.0, 0.0, 30.0),
    ] {
        out.push(Point3::new(x, y, z));
    }
    out
}

fn default_pairs() -> usize {
    20
}

fn default_standoff() -> f64 {
    150.0
}

/// On-disk form. Every field except the seed has a default; a missing mesh
/// means the built-in procedural phantom.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mesh: Option<PathBuf>,
    #[serde(default)]
    pub noise: Noise,
    #[serde(default = "phantom_targets")]
    pub targets: Vec<Target>,
    pub seed: u64,
    #[serde(default)]
    pub ground_truth: GroundTruth,
    #[serde(default = "start_joints")]
    pub start_joints: Joints,
    #[serde(default = "default_pairs")]
    pub calibration_pairs: usize,
    #[serde(default)]
    pub depth_camera: DepthCamera,
    #[serde(default = "default_viewpoints")]
    pub viewpoints: Vec<RigidTransform>,
    #[serde(default = "default_scene_box")]
    pub scene_box: Aabb,
    /// Spine frame, mm.
    #[serde(default = "default_fiducials")]
    pub fiducials: Vec<Point3>,
    /// Guide-origin distance from the target when aimed, mm.
    #[serde(default = "default_standoff")]
    pub standoff: f64,
}

fn start_joints() -> Joints {
    START_JOINTS
}

impl ScenarioConfig {
    pub fn new(seed: u64, noise: Noise) -> Self {
        Self {
            mesh: None,
            noise,
            targets: phantom_targets(),
            seed,
            ground_truth: GroundTruth::default(),
            start_joints: START_JOINTS,
            calibration_pairs: default_pairs(),
            depth_camera: DepthCamera::default(),
            viewpoints: default_viewpoints(),
            scene_box: default_scene_box(),
            fiducials: default_fiducials(),
            standoff: default_standoff(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("scenario file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid scenario: {}", .0.join("; "))]
    Invalid(Vec<String>),
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub spine_mesh: Arc<TriangleMesh>,
    pub robot: Arc<RobotModel>,
}

impl Scenario {
    /// Builds and validates. Relative mesh paths resolve against `base_dir`.
    pub fn from_config(config: ScenarioConfig, base_dir: &Path) -> Result<Self, ScenarioError> {
        let spine_mesh = match &config.mesh {
            Some(p) => load_mesh(base_dir.join(p), FrameId::Spine)?.0,
            None => lumbar_phantom(),
        };
        let s = Self {
            config,
            spine_mesh: Arc::new(spine_mesh),
            robot: Arc::new(RobotModel::default()),
        };
        let problems = s.violations();
        if problems.is_empty() {
            Ok(s)
        } else {
            Err(ScenarioError::Invalid(problems))
        }
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(IoError::from)?;
        let config: ScenarioConfig = serde_json::from_str(&text)?;
        Self::from_config(config, path.parent().unwrap_or(Path::new(".")))
    }

    /// Built-in phantom with the given noise.
    pub fn phantom(seed: u64, noise: Noise) -> Self {
        Self::from_config(ScenarioConfig::new(seed, noise), Path::new(".")).expect("built-in scenario is valid")
    }

    pub fn seed(&self) -> u64 {
        self.config.seed
    }

    pub fn noise(&self) -> &Noise {
        &self.config.noise
    }

    pub fn truth(&self) -> &GroundTruth {
        &self.config.ground_truth
    }

    pub fn targets(&self) -> &[Target] {
        &self.config.targets
    }

    pub fn target(&self, id: &str) -> Option<&Target> {
        self.config.targets.iter().find(|t| t.id == id)
    }

    pub fn start_state(&self) -> RobotState {
        RobotState::new(&self.robot.kinematics, &self.config.start_joints, 0).expect("validated start joints")
    }

    /// Every broken invariant, in a stable order.
    pub fn violations(&self) -> Vec<String> {
        let c = &self.config;
        let mut out = Vec::new();
        c.noise.check(&mut out);
        let bounds = self.spine_mesh.bounds();
        let mut ids = BTreeSet::new();
        for t in &c.targets {
            if !ids.insert(t.id.as_str()) {
                out.push(format!("duplicate target id '{}'", t.id));
            }
            if !bounds.contains(&t.position) {
                out.push(format!("target '{}' lies outside the spine mesh bounds", t.id));
            }
        }
        if c.targets.is_empty() {
            out.push("no targets".into());
        }
        if let Err(e) = self.robot.kinematics.check_limits(&c.start_joints) {
            out.push(format!("start_joints: {e}"));
        }
        if c.calibration_pairs < 3 {
            out.push(format!(
                "calibration_pairs must be at least 3, got {}",
                c.calibration_pairs
            ));
        }
        if c.viewpoints.is_empty() {
            out.push("no depth viewpoints".into());
        }
        if c.depth_camera.width == 0
            || c.depth_camera.height == 0
            || !(c.depth_camera.fov_deg > 0.0 && c.depth_camera.fov_deg < 180.0)
        {
            out.push("depth_camera needs a positive resolution and a field of view in (0, 180)".into());
        }
        if c.scene_box.is_empty() {
            out.push("scene_box is empty".into());
        }
        if c.fiducials.len() < 3 {
            out.push("at least 3 fiducials are needed".into());
        }
        if !(c.standoff > 0.0) {
            out.push("standoff must be positive".into());
        }
        if c.ground_truth.guide.direction.norm() < 1e-9 {
            out.push("ground_truth.guide.direction is zero".into());
        }
        if out.iter().all(|m| !m.starts_with("start_joints")) {
            let g = c.ground_truth.graph(&self.start_state());
            for f in FrameId::ALL {
                if !g.connected(FrameId::RobotBase, f) {
                    out.push(format!("ground-truth graph does not reach frame {f}"));
                }
            }
        }
        out
    }
}
