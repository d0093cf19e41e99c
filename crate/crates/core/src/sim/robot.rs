//! Procedural surface of the simulated arm. Each body is its own mesh (and
//! hierarchy) in the frame that rotates with its joint; posing never rewrites
//! vertices except when a merged snapshot is requested.

use crate::geometry::{PointCloud, TriangleMesh};
use crate::guidance::{raycast_local, Ray};
use crate::registration::{PosedModel, RegistrationError};
use crate::transform::{FrameId, Point3, RigidTransform, Vec3};

use super::kinematics::{Joints, Kinematics, DOF};
use super::shapes::MeshBuilder;

/// Needle guide fixed to the probe holder, in the end-effector frame.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NeedleGuide {
    pub origin: Point3,
    pub direction: Vec3,
}

impl NeedleGuide {
    /// Point at `depth` mm along the guide, end-effector frame.
    pub fn at(&self, depth: f64) -> Point3 {
        self.origin + self.direction.normalize() * depth
    }
}

impl Default for NeedleGuide {
    /// Bracket beside the probe, tilted 10 degrees towards the probe axis.
    fn default() -> Self {
        let a = 10f64.to_radians();
        Self {
            origin: Point3::new(45.0, 0.0, 75.0),
            direction: Vec3::new(-a.sin(), 0.0, a.cos()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RobotModel {
    pub kinematics: Kinematics,
    base: TriangleMesh,
    /// Body `i` moves with joint `i`, in coordinates `frame_i * Rz(q_i)`.
    links: Vec<TriangleMesh>,
}

const SEG: u32 = 24;

fn p(x: f64, y: f64, z: f64) -> Point3 {
    Point3::new(x, y, z)
}

fn at(x: f64, y: f64, z: f64) -> RigidTransform {
    RigidTransform::from_translation(Vec3::new(x, y, z))
}

impl Default for RobotModel {
    fn default() -> Self {
        let f = FrameId::RobotBase;
        let base = MeshBuilder::new()
            .cuboid(&at(-10.0, 0.0, 20.0), Vec3::new(160.0, 130.0, 20.0))
            .cylinder(p(0.0, 0.0, 40.0), p(0.0, 0.0, 180.0), 75.0, SEG)
            .build(f);
        let links = vec![
            MeshBuilder::new()
                .cylinder(p(0.0, 0.0, 180.0), p(0.0, 0.0, 340.0), 70.0, SEG)
                .cuboid(&at(75.0, 0.0, 250.0), Vec3::new(25.0, 40.0, 50.0))
                .cylinder(p(0.0, -75.0, 340.0), p(0.0, 75.0, 340.0), 70.0, SEG)
                .build(f),
            MeshBuilder::new()
                .cylinder(p(0.0, 0.0, 0.0), p(0.0, -150.0, 0.0), 65.0, SEG)
                .build(f),
            MeshBuilder::new()
                .cylinder(p(0.0, 0.0, 150.0), p(0.0, 0.0, 400.0), 62.0, SEG)
                .cuboid(&at(0.0, 70.0, 280.0), Vec3::new(30.0, 20.0, 45.0))
                .cylinder(p(0.0, -70.0, 400.0), p(0.0, 70.0, 400.0), 62.0, SEG)
                .build(f),
            MeshBuilder::new()
                .cylinder(p(0.0, 0.0, 0.0), p(0.0, 150.0, 0.0), 58.0, SEG)
                .build(f),
            MeshBuilder::new()
                .cylinder(p(0.0, 0.0, 150.0), p(0.0, 0.0, 400.0), 55.0, SEG)
                .cuboid(&at(58.0, 0.0, 300.0), Vec3::new(20.0, 30.0, 40.0))
                .cylinder(p(0.0, -60.0, 400.0), p(0.0, 60.0, 400.0), 52.0, SEG)
                .build(f),
            MeshBuilder::new()
                .cylinder(p(0.0, 0.0, 0.0), p(0.0, -80.0, 0.0), 48.0, SEG)
                .build(f),
            // Flange, ultrasound probe and needle-guide bracket. The end
            // effector sits at z = 126 here.
            MeshBuilder::new()
                .cylinder(p(0.0, 0.0, 80.0), p(0.0, 0.0, 126.0), 40.0, SEG)
                .cuboid(&at(0.0, 0.0, 186.0), Vec3::new(18.0, 35.0, 60.0))
                .cuboid(&at(40.0, 0.0, 166.0), Vec3::new(12.0, 10.0, 30.0))
                .build(f),
        ];
        Self {
            kinematics: Kinematics::default(),
            base,
            links,
        }
    }
}

impl RobotModel {
    /// Base-frame pose of every body (the static base first).
    pub fn body_poses(&self, q: &Joints) -> Vec<RigidTransform> {
        let frames = self.kinematics.frames(q);
        let mut out = Vec::with_capacity(DOF + 1);
        out.push(RigidTransform::identity());
        for i in 0..DOF {
            out.push(frames[i].compose(&RigidTransform::from_axis_angle(&Vec3::z(), q[i], Vec3::zeros())));
        }
        out
    }

    pub fn bodies(&self) -> impl Iterator<Item = &TriangleMesh> {
        std::iter::once(&self.base).chain(&self.links)
    }

    /// All bodies posed and merged, labelled `frame`, placed by `frame_t_base`.
    pub fn posed(&self, q: &Joints, frame_t_base: &RigidTransform, frame: FrameId) -> TriangleMesh {
        let parts: Vec<TriangleMesh> = self
            .bodies()
            .zip(self.body_poses(q))
            .map(|(m, pose)| m.transformed(&frame_t_base.compose(&pose), frame))
            .collect();
        TriangleMesh::merged(&parts, frame).expect("robot bodies are non-empty")
    }

    /// First hit of a base-frame ray on any body; returns the ray parameter.
    pub fn raycast(&self, q: &Joints, ray: &Ray) -> Option<f64> {
        self.raycast_posed(&self.body_poses(q), ray)
    }

    pub fn raycast_posed(&self, poses: &[RigidTransform], ray: &Ray) -> Option<f64> {
        self.bodies()
            .zip(poses)
            .filter_map(|(m, pose)| {
                let local = ray.transformed(&pose.inverse(), FrameId::RobotBase);
                raycast_local(&local, m).t_star
            })
            .min_by(f64::total_cmp)
    }

    /// Distance from a base-frame point to the posed surface.
    pub fn distance(&self, poses: &[RigidTransform], point: &Point3) -> f64 {
        self.bodies()
            .zip(poses)
            .map(|(m, pose)| m.distance_to(&pose.inverse().apply_point(point)))
            .fold(f64::INFINITY, f64::min)
    }

    /// Whether a base-frame point lies within `margin` of the posed surface.
    /// Bounding boxes prune most bodies before the exact distance is taken.
    pub fn is_near(&self, poses: &[RigidTransform], point: &Point3, margin: f64) -> bool {
        self.bodies().zip(poses).any(|(m, pose)| {
            let local = pose.inverse().apply_point(point);
            m.bounds().padded(margin).contains(&local) && m.distance_to(&local) <= margin
        })
    }
}

/// The robot as it appears in the virtual scene: posed by joints, then
/// placed at `v_t_r`.
pub struct VirtualRobot<'a> {
    pub model: &'a RobotModel,
    pub v_t_r: RigidTransform,
}

impl PosedModel for VirtualRobot<'_> {
    fn posed_mesh(&self, joints: &[f64]) -> Result<TriangleMesh, RegistrationError> {
        let q = self
            .model
            .kinematics
            .check_limits(joints)
            .map_err(|e| RegistrationError::Model(e.to_string()))?;
        Ok(self.model.posed(&q, &self.v_t_r, FrameId::VirtualWorld))
    }
}

/// Convenience: dense surface samples of the posed robot in the base frame.
pub fn surface_samples(model: &RobotModel, q: &Joints, count: usize, seed: u64) -> PointCloud {
    let mesh = model.posed(q, &RigidTransform::identity(), FrameId::RobotBase);
    crate::registration::sample_surface(&mesh, count, seed).expect("robot has area")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guidance::raycast_exhaustive;

    const READY: Joints = [0.0, 0.6, 0.0, -1.2, 0.0, 0.9, 0.0];

    #[test]
    fn flange_body_tracks_the_end_effector() {
        let model = RobotModel::default();
        let poses = model.body_poses(&READY);
        let ee = model.kinematics.forward_unchecked(&READY);
        // The flange face centre (z = 126 in body 7) is the end-effector origin.
        let face = poses[DOF].apply_point(&p(0.0, 0.0, 126.0));
        assert!((face.coords - ee.translation()).norm() < 1e-9);
    }

    #[test]
    fn body_raycast_matches_merged_mesh() {
        let model = RobotModel::default();
        let merged = model.posed(&READY, &RigidTransform::identity(), FrameId::RobotBase);
        let poses = model.body_poses(&READY);
        let origin = Point3::new(1500.0, 300.0, 900.0);
        let c = merged.bounds().center();
        for k in 0..200 {
            let target = c + Vec3::new((k % 20) as f64 * 30.0 - 300.0, 0.0, (k / 20) as f64 * 60.0 - 300.0);
            let ray = Ray::new(origin, target - origin, FrameId::RobotBase).unwrap();
            let a = model.raycast_posed(&poses, &ray);
            let b = raycast_exhaustive(&ray, &merged).t_star;
            match (a, b) {
                (Some(a), Some(b)) => assert!((a - b).abs() < 1e-6),
                (None, None) => {}
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn virtual_robot_rejects_out_of_range_joints() {
        let model = RobotModel::default();
        let v = VirtualRobot {
            model: &model,
            v_t_r: RigidTransform::identity(),
        };
        assert!(matches!(v.posed_mesh(&[3.0; 7]), Err(RegistrationError::Model(_))));
        assert_eq!(v.posed_mesh(&READY).unwrap().frame(), FrameId::VirtualWorld);
    }
}
