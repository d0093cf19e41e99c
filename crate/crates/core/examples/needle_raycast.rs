//! Predicted needle contact: cast the guide ray from the current probe pose
//! into the spine mesh, then aim at a target and cast again.

use spinenav::guidance::predict_hit;
use spinenav::sim::{aim_pose, jog, target_in_base, JogLimits, Noise, Operator, RobotState, Scenario};

fn main() {
    let s = Scenario::phantom(1, Noise::zero());
    let guide = s.truth().guide;
    let mut state: RobotState = s.start_state();
    let graph = s.truth().graph(&state);
    let hit = predict_hit(&guide.origin, &guide.direction, &graph, &s.spine_mesh).unwrap();
    println!("ready pose: {}", serde_json::to_string(&hit).unwrap());

    let target = s.target("FJ-L3-L4-left").unwrap();
    let target_r = target_in_base(target, &graph).unwrap();
    let goal = aim_pose(&guide, &target_r, s.config.standoff, &state.end_effector);
    let limits = JogLimits::default();
    // Capped jogs towards the goal, as an operator would steer.
    loop {
        let jogs = Operator::Exact.jogs(&state.end_effector, &goal, &limits);
        if jogs.is_empty() {
            break;
        }
        for j in jogs {
            state = jog(&s.robot.kinematics, &limits, &state, &j).state;
        }
    }
    let graph = s.truth().graph(&state);
    let hit = predict_hit(&guide.origin, &guide.direction, &graph, &s.spine_mesh).unwrap();
    match (hit.point, hit.t_star) {
        (Some(p), Some(t)) => println!(
            "aimed at {}: hit at t = {t:.2} mm, {:.3} mm from the target",
            target.id,
            (p - target.position).norm()
        ),
        _ => println!("aimed at {}: no bone on the path", target.id),
    }
}
