//! Simplified lumbar segment: five vertebra-like bodies with spinous,
//! transverse and articular protrusions, plus the needle targets on it.
//!
//! Spine frame: x towards the patient's left, y cranial, z posterior (the
//! side the needle comes from). Levels L1..L5 run from +y to -y.

use serde::{Deserialize, Serialize};

use crate::geometry::TriangleMesh;
use crate::transform::{FrameId, Point3, RigidTransform, Vec3};

use super::shapes::MeshBuilder;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TargetKind {
    FacetJoint,
    LumbarPuncture,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Target {
    pub id: String,
    pub kind: TargetKind,
    /// Spine frame, mm.
    pub position: Point3,
    pub level: String,
}

/// Centre-to-centre distance of adjacent vertebrae.
pub const PITCH: f64 = 36.0;
/// Cranio-caudal length of a spinous process; leaves an 8 mm interspinous gap.
pub const SPINOUS_LENGTH: f64 = 28.0;
pub const LEVELS: usize = 5;

fn centre(level: usize) -> f64 {
    (2.0 - level as f64) * PITCH
}

fn boxed(b: &mut MeshBuilder, c: [f64; 3], half: [f64; 3]) {
    b.cuboid(
        &RigidTransform::from_translation(Vec3::new(c[0], c[1], c[2])),
        Vec3::new(half[0], half[1], half[2]),
    );
}

/// The procedural phantom in the spine frame.
pub fn lumbar_phantom() -> TriangleMesh {
    let mut b = MeshBuilder::new();
    for level in 0..LEVELS {
        let y = centre(level);
        b.cylinder(
            Point3::new(0.0, y - 12.0, -35.0),
            Point3::new(0.0, y + 12.0, -35.0),
            20.0,
            24,
        );
        // Lamina and pedicles as one arch block.
        boxed(&mut b, [0.0, y, -4.0], [17.0, 10.0, 7.0]);
        boxed(&mut b, [0.0, y, 17.0], [5.0, SPINOUS_LENGTH / 2.0, 14.0]);
        for side in [-1.0, 1.0] {
            boxed(&mut b, [side * 32.0, y, -6.0], [15.0, 5.0, 5.0]);
        }
    }
    // Articular processes bridge adjacent arches.
    for junction in 0..LEVELS - 1 {
        let y = centre(junction) - PITCH / 2.0;
        for side in [-1.0, 1.0] {
            boxed(&mut b, [side * 15.0, y, 4.0], [6.0, 8.0, 6.0]);
        }
    }
    b.build(FrameId::Spine)
}

/// Targets of the procedural phantom: both facet joints and the interspinous
/// midline at every junction.
pub fn phantom_targets() -> Vec<Target> {
    let mut out = Vec::new();
    for junction in 0..LEVELS - 1 {
        let level = format!("L{}-L{}", junction + 1, junction + 2);
        let y = centre(junction) - PITCH / 2.0;
        for (side, x) in [("left", 15.0), ("right", -15.0)] {
            out.push(Target {
                id: format!("FJ-{level}-{side}"),
                kind: TargetKind::FacetJoint,
                // Top face of the articular block.
                position: Point3::new(x, y, 10.0),
                level: level.clone(),
            });
        }
        out.push(Target {
            id: format!("LP-{level}"),
            kind: TargetKind::LumbarPuncture,
            position: Point3::new(0.0, y, 4.0),
            level,
        });
    }
    out
}
