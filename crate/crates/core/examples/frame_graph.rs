//! Frame graph: register a few calibrated edges and express the spine in the
//! viewer frame by path composition.

use spinenav::{FrameId, Point3, RigidTransform, TransformGraph, Vec3};

fn main() {
    let mut g = TransformGraph::new();
    let shift = |x, y, z| RigidTransform::from_translation(Vec3::new(x, y, z));
    g.insert(FrameId::Spine, FrameId::Cbct, shift(-10.0, 0.0, 5.0), 0)
        .unwrap();
    g.insert(FrameId::Cbct, FrameId::OpticalCamera, shift(0.0, 800.0, 0.0), 0)
        .unwrap();
    g.insert(
        FrameId::RobotBase,
        FrameId::OpticalCamera,
        RigidTransform::from_axis_angle(&Vec3::z(), 0.5, Vec3::new(900.0, 0.0, 400.0)),
        0,
    )
    .unwrap();
    g.insert(
        FrameId::VirtualWorld,
        FrameId::RobotBase,
        shift(-400.0, 250.0, -150.0),
        1,
    )
    .unwrap();
    g.insert(FrameId::VirtualWorld, FrameId::Viewer, shift(0.0, 1600.0, 0.0), 2)
        .unwrap();

    println!("path S -> H: {:?}", g.path(FrameId::Spine, FrameId::Viewer).unwrap());
    let s_t_h = g.query(FrameId::Spine, FrameId::Viewer).unwrap();
    println!(
        "viewer origin in the spine frame: {:?}",
        s_t_h.apply_point(&Point3::origin())
    );
    println!("{}", serde_json::to_string_pretty(&g.records()).unwrap());
}
