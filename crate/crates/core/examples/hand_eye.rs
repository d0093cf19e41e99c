//! Hand-eye calibration on the simulated robot: move through random poses,
//! record (robot, marker) pairs and solve AX = XB for the camera pose.

use spinenav::calibration::solve_handeye;
use spinenav::sim::{calibration_poses, pose_pair, Noise, RobotState, Scenario};

fn main() {
    for (label, noise) in [("noise-free", Noise::zero()), ("study noise", Noise::study())] {
        let s = Scenario::phantom(3, noise);
        let start = s.start_state();
        let pairs: Vec<_> = calibration_poses(&s, &start.joints, 20, 0)
            .iter()
            .enumerate()
            .map(|(i, q)| pose_pair(&s, &RobotState::new(&s.robot.kinematics, q, 0).unwrap(), i as u64, i))
            .collect();
        let sol = solve_handeye(&pairs).unwrap();
        let truth = s.truth().r_t_o;
        println!(
            "{label}: error {:.4} mm / {:.4} deg, residuals {:.2e} rad / {:.2e} mm",
            sol.x.translation_distance(&truth),
            sol.x.angle_to(&truth).to_degrees(),
            sol.rotation_residual,
            sol.translation_residual
        );
    }
}
