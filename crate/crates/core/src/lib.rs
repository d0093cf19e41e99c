pub mod acceptance;
pub mod calibration;
pub mod cli;
pub mod geometry;
pub mod guidance;
pub mod io;
pub mod registration;
pub mod service;
pub mod sim;
pub mod transform;

pub use geometry::{Aabb, PointCloud, TriangleMesh};
pub use transform::{FrameId, Point3, RigidTransform, TransformGraph, Vec3};
