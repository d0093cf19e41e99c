//! Virtual-to-real robot registration: box filter, multi-view accumulation,
//! model sampling, clique-based global alignment and ICP refinement.
//!
//! Results map real points (robot base frame) into the virtual frame.

mod features;
mod global;
mod icp;
mod kabsch;
mod sampling;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Aabb, PointCloud};
use crate::transform::{FrameId, GraphError, Point3, RigidTransform, TransformGraph, Vec3};

pub use features::{describe, descriptor_distance, estimate_normals, Descriptor, DESCRIPTOR_LEN};
pub use global::{
    compatibility_graph, core_numbers, global_register, global_register_traced, maximal_cliques, mutual_matches,
    stride_keypoints, BitSet, Correspondence, GlobalTrace,
};
pub use icp::{icp_refine, retained_count, trimmed_matches};
pub use kabsch::fit_rigid;
pub use sampling::{sample_surface, sample_virtual, PosedModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegistrationError {
    #[error("frames disagree: {0} vs {1}")]
    MixedFrames(FrameId, FrameId),
    #[error("mesh has no surface to sample")]
    EmptyMesh,
    #[error("empty point cloud: {0}")]
    EmptyCloud(&'static str),
    #[error("compatibility graph has no clique of size >= 3")]
    NoCliques,
    #[error("voxel size must be positive and finite")]
    BadVoxel,
    #[error("model: {0}")]
    Model(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("{stage} stage: {source}")]
    Stage {
        stage: &'static str,
        source: Box<RegistrationError>,
    },
}

impl RegistrationError {
    fn at(self, stage: &'static str) -> Self {
        RegistrationError::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// The innermost error with stage wrappers removed.
    pub fn root(&self) -> &RegistrationError {
        match self {
            RegistrationError::Stage { source, .. } => source.root(),
            e => e,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistrationResult {
    /// `v_t_r`: maps real points into the virtual frame.
    pub transform: RigidTransform,
    pub rmse: f64,
    pub inlier_count: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Mean squared distance over the retained set, one entry per accepted
    /// iterate (ICP only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub objective_history: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlobalParams {
    pub rigidity_tol: f64,
    pub inlier_tol: f64,
    pub max_cliques: usize,
    pub min_clique: usize,
    pub normal_k: usize,
    pub descriptor_radius: f64,
    /// Real-side descriptor queries, taken at a fixed stride.
    pub max_keypoints: usize,
    /// Virtual-side descriptors; matching against a denser set means a real
    /// keypoint usually has a virtual point close to its true partner.
    pub max_virtual_keypoints: usize,
    pub max_correspondences: usize,
    /// Best hypotheses (by correspondence inliers) rescored against the cloud.
    pub rescore_top: usize,
    /// Fit normals from the points even if the cloud carries its own, so both
    /// sides of a match see the same estimator.
    pub recompute_normals: bool,
    /// Nearest-neighbour refits applied to the winning hypothesis.
    pub polish_steps: usize,
}

impl Default for GlobalParams {
    fn default() -> Self {
        Self {
            rigidity_tol: 5.0,
            inlier_tol: 10.0,
            max_cliques: 10_000,
            min_clique: 3,
            normal_k: 24,
            descriptor_radius: 80.0,
            max_keypoints: 2000,
            max_virtual_keypoints: 20_000,
            max_correspondences: 1000,
            rescore_top: 64,
            recompute_normals: true,
            polish_steps: 150,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IcpParams {
    pub max_iterations: usize,
    pub rel_tol: f64,
    /// Fraction of worst pairs dropped each iteration; 0 gives plain ICP.
    pub trim_fraction: f64,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            rel_tol: 1e-6,
            trim_fraction: 0.1,
        }
    }
}

/// Full pipeline configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistrationParams {
    pub voxel: f64,
    pub virtual_count: usize,
    pub seed: u64,
    pub global: GlobalParams,
    pub icp: IcpParams,
}

impl Default for RegistrationParams {
    fn default() -> Self {
        Self {
            voxel: 4.0,
            virtual_count: 20_000,
            seed: 0,
            global: GlobalParams::default(),
            icp: IcpParams::default(),
        }
    }
}

/// Points inside the closed box, in their original order.
pub fn filter_by_box(cloud: &PointCloud, bounds: &Aabb) -> PointCloud {
    cloud.select(|_, p| bounds.contains(p))
}

/// Union of the frames reduced to one centroid per occupied voxel. Output is
/// ordered by voxel coordinate, so it depends only on the input sequence.
pub fn accumulate(frames: &[PointCloud], voxel: f64) -> Result<PointCloud, RegistrationError> {
    if !(voxel > 0.0 && voxel.is_finite()) {
        return Err(RegistrationError::BadVoxel);
    }
    let Some(first) = frames.first() else {
        return Err(RegistrationError::EmptyCloud("no frames to accumulate"));
    };
    if let Some(other) = frames.iter().find(|f| f.frame != first.frame) {
        return Err(RegistrationError::MixedFrames(first.frame, other.frame));
    }
    let mut cells: BTreeMap<[i64; 3], (Vec3, usize)> = BTreeMap::new();
    for f in frames {
        for p in &f.points {
            let key = [0, 1, 2].map(|a| (p[a] / voxel).floor() as i64);
            let e = cells.entry(key).or_insert((Vec3::zeros(), 0));
            e.0 += p.coords;
            e.1 += 1;
        }
    }
    let points = cells.values().map(|(s, n)| Point3::from(s / *n as f64)).collect();
    Ok(PointCloud::new(points, first.frame))
}

/// Box filter, accumulation, model sampling, global alignment, ICP. On success
/// the `V -> R` edge is written into `graph` at `timestamp`.
pub fn register_robot(
    real_frames: &[PointCloud],
    bounds: &Aabb,
    model: &dyn PosedModel,
    joints: &[f64],
    params: &RegistrationParams,
    graph: &mut TransformGraph,
    timestamp: u64,
) -> Result<RegistrationResult, RegistrationError> {
    let filtered: Vec<PointCloud> = real_frames.iter().map(|f| filter_by_box(f, bounds)).collect();
    if filtered.iter().all(PointCloud::is_empty) {
        return Err(RegistrationError::EmptyCloud("no points inside the box").at("filter"));
    }
    let real = accumulate(&filtered, params.voxel).map_err(|e| e.at("accumulate"))?;
    let virt = sample_virtual(model, joints, params.virtual_count, params.seed).map_err(|e| e.at("sample"))?;
    let coarse = global_register(&real, &virt, &params.global).map_err(|e| e.at("global"))?;
    let fine = icp_refine(&real, &virt, &coarse.transform, &params.icp);
    graph
        .insert(FrameId::VirtualWorld, FrameId::RobotBase, fine.transform, timestamp)
        .map_err(|e| RegistrationError::from(e).at("publish"))?;
    Ok(fine)
}

#[cfg(test)]
pub(crate) mod tests;
