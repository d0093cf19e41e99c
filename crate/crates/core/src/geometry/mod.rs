//! Shared geometric containers: boxes, point clouds, triangle meshes and their
//! spatial indices.

mod aabb;
mod bvh;
mod cloud;
mod kdtree;
mod mesh;

pub use aabb::Aabb;
pub use bvh::{Bvh, BvhNode};
pub use cloud::PointCloud;
pub use kdtree::{KdTree, Neighbour};
pub use mesh::{closest_point_on_triangle, CleanReport, MeshError, TriangleMesh};
