//! Virtual-to-real robot registration from simulated depth frames with
//! sensor noise and clutter.

use std::time::Instant;

use spinenav::registration::RegistrationParams;
use spinenav::sim::{capture_depth, register_frames, Noise, Scenario};
use spinenav::{FrameId, TransformGraph};

fn main() {
    let s = Scenario::phantom(5, Noise::study());
    let state = s.start_state();
    let frames = capture_depth(&s, &state, 0);
    println!(
        "{} frames, {} points",
        frames.len(),
        frames.iter().map(|f| f.len()).sum::<usize>()
    );

    let mut graph = TransformGraph::new();
    let t0 = Instant::now();
    let r = register_frames(&s, &state, &frames, &RegistrationParams::default(), &mut graph, 0).unwrap();
    let truth = s.truth().v_t_r;
    println!(
        "rmse {:.2} mm after {} ICP iterations in {:.1} s; pose error {:.2} mm / {:.3} deg",
        r.rmse,
        r.iterations,
        t0.elapsed().as_secs_f64(),
        r.transform.translation_distance(&truth),
        r.transform.angle_to(&truth).to_degrees()
    );
    assert!(graph.connected(FrameId::VirtualWorld, FrameId::RobotBase));
}
