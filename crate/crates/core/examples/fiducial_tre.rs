//! Target registration error of the calibrated CBCT-to-robot transform,
//! measured on fiducials located with a tracked pointer.

use spinenav::sim::{tre_trial, Noise, Scenario};

fn main() {
    let noise = Noise {
        tracker_sigma_mm: 0.3,
        tracker_sigma_deg: 0.05,
        localization_sigma_mm: 0.4,
        ..Noise::zero()
    };
    let tre: Vec<f64> = (0..50)
        .map(|seed| tre_trial(&Scenario::phantom(seed, noise), 0).unwrap())
        .collect();
    let mean = tre.iter().sum::<f64>() / tre.len() as f64;
    let sd = (tre.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / tre.len() as f64).sqrt();
    println!("TRE over {} scenarios: {mean:.2} +/- {sd:.2} mm", tre.len());
}
