//! Noisy sensors. Every stream draws from its own ChaCha generator keyed by
//! the scenario seed, a per-sensor salt and the caller's observation index,
//! so a reading never depends on how many other readings were taken.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;

use crate::geometry::PointCloud;
use crate::guidance::Ray;
use crate::transform::{FrameId, Point3, RigidTransform, Vec3};

use super::kinematics::RobotState;
use super::robot::NeedleGuide;
use super::scenario::Scenario;

const TRACKER: u64 = 0x7472_6163_6b65_7200;
const DEPTH: u64 = 0x6465_7074_6800_0000;
const GUIDE: u64 = 0x6775_6964_6500_0000;
const FIDUCIAL: u64 = 0x6669_6475_6369_616c;

/// Clutter is kept at least this far from the robot surface, mm.
pub const CLUTTER_CLEARANCE: f64 = 10.0;

pub fn stream(seed: u64, salt: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt);
    rng.set_stream(index);
    rng
}

fn gaussian3<R: Rng>(rng: &mut R) -> Vec3 {
    Vec3::new(
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    )
}

/// Right-multiplies `t` by a random motion: per-axis translation noise
/// `sigma_t` and a rotation of N(0, `sigma_r`) radians about a uniform axis.
pub fn perturb<R: Rng>(rng: &mut R, t: &RigidTransform, sigma_t: f64, sigma_r: f64) -> RigidTransform {
    let axis = gaussian3(rng).normalize();
    let angle: f64 = rng.sample::<f64, _>(StandardNormal) * sigma_r;
    let dt = gaussian3(rng) * sigma_t;
    t.compose(&RigidTransform::from_rotation_vector(&(axis * angle), dt))
}

/// Tracked marker pose `o_t_m` for the robot state; observation `index`
/// selects an independent noise draw.
pub fn observe_tracker(scenario: &Scenario, state: &RobotState, index: u64) -> RigidTransform {
    let truth = scenario.truth().o_t_m(&state.end_effector);
    let n = scenario.noise();
    if n.tracker_sigma_mm == 0.0 && n.tracker_sigma_deg == 0.0 {
        return truth;
    }
    let mut rng = stream(scenario.seed(), TRACKER, index);
    perturb(&mut rng, &truth, n.tracker_sigma_mm, n.tracker_sigma_deg.to_radians())
}

/// Unit view rays of the depth camera in its own frame, row-major.
pub fn camera_rays(scenario: &Scenario) -> Vec<Vec3> {
    let cam = &scenario.config.depth_camera;
    let f = cam.width as f64 / 2.0 / (cam.fov_deg.to_radians() / 2.0).tan();
    let (cx, cy) = (cam.width as f64 / 2.0, cam.height as f64 / 2.0);
    let mut out = Vec::with_capacity((cam.width * cam.height) as usize);
    for v in 0..cam.height {
        for u in 0..cam.width {
            out.push(Vec3::new((u as f64 + 0.5 - cx) / f, (v as f64 + 0.5 - cy) / f, 1.0).normalize());
        }
    }
    out
}

/// One depth frame of the robot from `viewpoint` (the camera pose in the
/// robot base), returned in the robot base frame. Surface points carry
/// Gaussian range noise; clutter is drawn uniformly in the scene box away
/// from the robot so it makes up the configured fraction of the frame.
pub fn observe_depth(scenario: &Scenario, state: &RobotState, viewpoint: &RigidTransform, index: u64) -> PointCloud {
    let robot = &scenario.robot;
    let poses = robot.body_poses(&state.joints);
    let eye = Point3::from(*viewpoint.translation());
    let rays = camera_rays(scenario);
    let hits: Vec<(Vec3, f64)> = rays
        .par_iter()
        .filter_map(|d| {
            let dir = viewpoint.apply_vector(d);
            let ray = Ray::new(eye, dir, FrameId::RobotBase).expect("unit direction");
            robot.raycast_posed(&poses, &ray).map(|t| (dir, t))
        })
        .collect();

    let noise = scenario.noise();
    let mut rng = stream(scenario.seed(), DEPTH, index);
    let range = Normal::new(0.0, noise.depth_sigma_mm).expect("validated sigma");
    let mut points: Vec<Point3> = hits
        .iter()
        .map(|(dir, t)| {
            let dt = if noise.depth_sigma_mm > 0.0 {
                range.sample(&mut rng)
            } else {
                0.0
            };
            eye + dir * (t + dt)
        })
        .collect();

    let f = noise.outlier_fraction;
    let clutter = if hits.is_empty() {
        (f * rays.len() as f64).round() as usize
    } else {
        (hits.len() as f64 * f / (1.0 - f)).round() as usize
    };
    let b = scenario.config.scene_box;
    let mut drawn = 0;
    while drawn < clutter {
        let p = Point3::new(
            rng.random_range(b.min.x..=b.max.x),
            rng.random_range(b.min.y..=b.max.y),
            rng.random_range(b.min.z..=b.max.z),
        );
        if !robot.is_near(&poses, &p, CLUTTER_CLEARANCE) {
            points.push(p);
            drawn += 1;
        }
    }
    PointCloud::new(points, FrameId::RobotBase)
}

/// Needle guide as known to the navigation software: the true guide
/// perturbed by the probe-calibration error. Fixed per scenario.
pub fn estimated_guide(scenario: &Scenario) -> NeedleGuide {
    let truth = scenario.truth().guide;
    let n = scenario.noise();
    if n.guide_sigma_mm == 0.0 && n.guide_sigma_deg == 0.0 {
        return truth;
    }
    let mut rng = stream(scenario.seed(), GUIDE, 0);
    let d = truth.direction.normalize();
    // Tilt about a random axis perpendicular to the guide.
    let axis = d.cross(&gaussian3(&mut rng)).normalize();
    let angle: f64 = rng.sample::<f64, _>(StandardNormal) * n.guide_sigma_deg.to_radians();
    let tilt = RigidTransform::from_axis_angle(&axis, angle, Vec3::zeros());
    NeedleGuide {
        origin: truth.origin + gaussian3(&mut rng) * n.guide_sigma_mm,
        direction: tilt.apply_vector(&d),
    }
}

/// Fiducials located in the robot frame, with localization noise.
pub fn observe_fiducials(scenario: &Scenario, index: u64) -> PointCloud {
    let truth = scenario.truth();
    let r_t_s = truth.r_t_s();
    let sigma = scenario.noise().localization_sigma_mm;
    let mut rng = stream(scenario.seed(), FIDUCIAL, index);
    let points = scenario
        .config
        .fiducials
        .iter()
        .map(|p| r_t_s.apply_point(p) + gaussian3(&mut rng) * sigma)
        .collect();
    PointCloud::new(points, FrameId::RobotBase)
}

/// The scenario's fiducials in the CBCT frame.
pub fn fiducials_ct(scenario: &Scenario) -> PointCloud {
    let c_t_s = scenario.truth().s_t_c.inverse();
    PointCloud::new(
        scenario.config.fiducials.iter().map(|p| c_t_s.apply_point(p)).collect(),
        FrameId::Cbct,
    )
}
