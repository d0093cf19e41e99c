//! Rigid transforms and named coordinate frames.
//!
//! Notation: a transform stored as `a_t_b` maps coordinates expressed in frame
//! `b` into frame `a`, so `a_t_b.compose(&b_t_c)` is `a_t_c`. All lengths are
//! millimetres.

mod graph;
mod json;

pub use graph::{Edge, EdgeRecord, GraphError, SharedGraph, TransformGraph};

use std::fmt;
use std::ops::Mul;
use std::str::FromStr;

use nalgebra::{Matrix3, Matrix4, Quaternion, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

pub type Vec3 = Vector3<f64>;
pub type Point3 = nalgebra::Point3<f64>;

/// Element of SE(3): unit quaternion rotation followed by a translation in mm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    rotation: UnitQuaternion<f64>,
    translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vec3) -> Self {
        Self {
            rotation: renormalize(rotation),
            translation,
        }
    }

    /// Builds a transform from raw quaternion components `(w, x, y, z)`.
    /// Returns `None` for a zero-norm or non-finite quaternion.
    pub fn from_wxyz(q: [f64; 4], translation: Vec3) -> Option<Self> {
        let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
        let norm = quat.norm();
        if !norm.is_finite() || norm < 1e-12 || !translation.iter().all(|v| v.is_finite()) {
            return None;
        }
        // Already unit to rounding: keep the bits so text round trips are exact.
        if (norm - 1.0).abs() <= 4.0 * f64::EPSILON {
            return Some(Self {
                rotation: UnitQuaternion::new_unchecked(quat),
                translation,
            });
        }
        Some(Self::new(UnitQuaternion::from_quaternion(quat), translation))
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation,
        }
    }

    /// Rotation of `angle` radians about `axis` (need not be normalized), then translation.
    pub fn from_axis_angle(axis: &Vec3, angle: f64, translation: Vec3) -> Self {
        let rotation = match Unit::try_new(*axis, 1e-15) {
            Some(axis) => UnitQuaternion::from_axis_angle(&axis, angle),
            None => UnitQuaternion::identity(),
        };
        Self::new(rotation, translation)
    }

    /// Rotation vector (axis * angle, radians) plus translation.
    pub fn from_rotation_vector(rotvec: &Vec3, translation: Vec3) -> Self {
        Self::new(UnitQuaternion::from_scaled_axis(*rotvec), translation)
    }

    /// Projects an arbitrary 3x3 matrix onto the nearest rotation.
    pub fn from_matrix_parts(rotation: &Matrix3<f64>, translation: Vec3) -> Self {
        let rot = nalgebra::Rotation3::from_matrix_eps(rotation, 1e-15, 100, nalgebra::Rotation3::identity());
        Self::new(UnitQuaternion::from_rotation_matrix(&rot), translation)
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        Self {
            rotation: renormalize(self.rotation * other.rotation),
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rotation = self.rotation.inverse();
        Self {
            rotation,
            translation: -(rotation * self.translation),
        }
    }

    pub fn apply_point(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn apply_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// Rotation angle in `[0, π]`.
    pub fn rotation_angle(&self) -> f64 {
        self.rotation.angle()
    }

    /// Geodesic angle between the two rotations, radians.
    pub fn angle_to(&self, other: &RigidTransform) -> f64 {
        self.rotation.angle_to(&other.rotation)
    }

    /// Norm of the translation difference, mm.
    pub fn translation_distance(&self, other: &RigidTransform) -> f64 {
        (self.translation - other.translation).norm()
    }

    pub fn approx_eq(&self, other: &RigidTransform, trans_tol: f64, rot_tol: f64) -> bool {
        self.translation_distance(other) <= trans_tol && self.angle_to(other) <= rot_tol
    }
}

impl Mul for RigidTransform {
    type Output = RigidTransform;
    fn mul(self, rhs: RigidTransform) -> RigidTransform {
        self.compose(&rhs)
    }
}

impl Mul<&RigidTransform> for &RigidTransform {
    type Output = RigidTransform;
    fn mul(self, rhs: &RigidTransform) -> RigidTransform {
        self.compose(rhs)
    }
}

fn renormalize(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::new_normalize(q.into_inner())
}

/// Named coordinate frames of the navigation chain.
///
/// Variants are declared in the alphabetical order of their symbols so the
/// derived ordering is the lexicographic order of frame names.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FrameId {
    /// CBCT volume.
    #[serde(rename = "C")]
    Cbct,
    /// Robot end-effector (probe holder flange).
    #[serde(rename = "E")]
    EndEffector,
    /// Head-mounted display.
    #[serde(rename = "H")]
    Viewer,
    /// Tracked marker on the probe.
    #[serde(rename = "M")]
    Marker,
    /// Optical tracking camera.
    #[serde(rename = "O")]
    OpticalCamera,
    /// Robot base.
    #[serde(rename = "R")]
    RobotBase,
    /// Spine mesh frame, identical to the patient frame.
    #[serde(rename = "S", alias = "P")]
    Spine,
    /// Ultrasound image.
    #[serde(rename = "U")]
    Ultrasound,
    /// Virtual world of the display.
    #[serde(rename = "V")]
    VirtualWorld,
}

impl FrameId {
    pub const ALL: [FrameId; 9] = [
        FrameId::Cbct,
        FrameId::EndEffector,
        FrameId::Viewer,
        FrameId::Marker,
        FrameId::OpticalCamera,
        FrameId::RobotBase,
        FrameId::Spine,
        FrameId::Ultrasound,
        FrameId::VirtualWorld,
    ];

    pub fn symbol(self) -> char {
        match self {
            FrameId::Cbct => 'C',
            FrameId::EndEffector => 'E',
            FrameId::Viewer => 'H',
            FrameId::Marker => 'M',
            FrameId::OpticalCamera => 'O',
            FrameId::RobotBase => 'R',
            FrameId::Spine => 'S',
            FrameId::Ultrasound => 'U',
            FrameId::VirtualWorld => 'V',
        }
    }
}

impl fmt::Display for FrameId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.symbol())
    }
}

impl FromStr for FrameId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "C" => Ok(FrameId::Cbct),
            "E" => Ok(FrameId::EndEffector),
            "H" => Ok(FrameId::Viewer),
            "M" => Ok(FrameId::Marker),
            "O" => Ok(FrameId::OpticalCamera),
            "R" => Ok(FrameId::RobotBase),
            "S" | "P" => Ok(FrameId::Spine),
            "U" => Ok(FrameId::Ultrasound),
            "V" => Ok(FrameId::VirtualWorld),
            other => Err(format!("unknown frame '{other}'")),
        }
    }
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use rand::Rng;

    pub fn random_transform<R: Rng>(rng: &mut R, max_translation: f64) -> RigidTransform {
        let q = Quaternion::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let t = Vec3::new(
            rng.random_range(-max_translation..max_translation),
            rng.random_range(-max_translation..max_translation),
            rng.random_range(-max_translation..max_translation),
        );
        RigidTransform::new(UnitQuaternion::from_quaternion(q), t)
    }
}

#[cfg(test)]
mod tests {
    use super::testutil::random_transform;
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn identity_is_neutral() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = random_transform(&mut rng, 500.0);
        let id = RigidTransform::identity();
        assert!(id.compose(&t).approx_eq(&t, 1e-12, 1e-12));
        assert!(t.compose(&id).approx_eq(&t, 1e-12, 1e-12));
    }

    #[test]
    fn quarter_turns_compose_to_half_turn() {
        let rz90 = RigidTransform::from_axis_angle(&Vec3::z(), FRAC_PI_2, Vec3::zeros());
        let rz180 = RigidTransform::from_axis_angle(&Vec3::z(), std::f64::consts::PI, Vec3::zeros());
        assert!(rz90.compose(&rz90).approx_eq(&rz180, 1e-12, 1e-12));
    }

    #[test]
    fn inverse_of_translation() {
        let t = RigidTransform::from_translation(Vec3::new(1.0, 2.0, 3.0));
        let inv = t.inverse();
        assert_relative_eq!(*inv.translation(), Vec3::new(-1.0, -2.0, -3.0));
        assert_eq!(inv.rotation_angle(), 0.0);
        assert!(RigidTransform::identity()
            .inverse()
            .approx_eq(&RigidTransform::identity(), 0.0, 0.0));
    }

    #[test]
    fn compose_matches_homogeneous_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let a = random_transform(&mut rng, 1000.0);
            let b = random_transform(&mut rng, 1000.0);
            let prod = a.to_matrix() * b.to_matrix();
            assert_relative_eq!(a.compose(&b).to_matrix(), prod, epsilon = 1e-9);
        }
    }

    #[test]
    fn rejects_zero_quaternion() {
        assert!(RigidTransform::from_wxyz([0.0; 4], Vec3::zeros()).is_none());
        assert!(RigidTransform::from_wxyz([1.0, 0.0, 0.0, f64::NAN], Vec3::zeros()).is_none());
    }

    #[test]
    fn frame_symbols_parse_and_order() {
        for f in FrameId::ALL {
            assert_eq!(f.symbol().to_string().parse::<FrameId>().unwrap(), f);
        }
        assert_eq!("P".parse::<FrameId>().unwrap(), FrameId::Spine);
        let mut sorted = FrameId::ALL;
        sorted.sort_by_key(|f| f.symbol());
        assert_eq!(sorted, FrameId::ALL);
    }

    fn arb_transform() -> impl Strategy<Value = RigidTransform> {
        (
            prop::array::uniform4(-1.0f64..1.0),
            prop::array::uniform3(-1000.0f64..1000.0),
        )
            .prop_filter_map("zero quaternion", |(q, t)| RigidTransform::from_wxyz(q, Vec3::from(t)))
    }

    proptest! {
        #[test]
        fn double_inverse_is_identity(t in arb_transform()) {
            let back = t.inverse().inverse();
            prop_assert!(back.approx_eq(&t, 1e-12 * (1.0 + t.translation().norm()), 1e-12));
        }

        #[test]
        fn compose_with_inverse_is_identity(t in arb_transform()) {
            let id = t.compose(&t.inverse());
            prop_assert!(id.rotation_angle() <= 1e-9);
            prop_assert!(id.translation().norm() <= 1e-9);
            prop_assert!((id.rotation().norm() - 1.0).abs() <= 1e-9);
        }

        #[test]
        fn composition_is_associative(a in arb_transform(), b in arb_transform(), c in arb_transform()) {
            let left = a.compose(&b).compose(&c);
            let right = a.compose(&b.compose(&c));
            prop_assert!(left.approx_eq(&right, 1e-9, 1e-9));
            prop_assert!((left.rotation().norm() - 1.0).abs() <= 1e-9);
        }
    }
}
