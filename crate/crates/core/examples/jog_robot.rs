//! Cartesian jogging of the 7-DoF arm through damped least-squares IK.

use spinenav::sim::{jog, Axis, JogCommand, JogLimits, Noise, Scenario};

fn main() {
    let s = Scenario::phantom(0, Noise::zero());
    let limits = JogLimits::default();
    let mut state = s.start_state();
    println!("start: {:?}", state.end_effector.translation());
    for (axis, delta) in [(Axis::X, 5.0), (Axis::Z, -4.0), (Axis::Rz, 2.0), (Axis::X, 50.0)] {
        let out = jog(&s.robot.kinematics, &limits, &state, &JogCommand { axis, delta });
        match out.rejected {
            Some(why) => println!("{axis:?} {delta:+}: rejected ({why:?})"),
            None => println!("{axis:?} {delta:+}: now at {:?}", out.state.end_effector.translation()),
        }
        state = out.state;
    }
}
