//! Regenerates the files under `assets/`: the phantom mesh, two scenarios,
//! a canned facet-joint session log and the CLI fixtures.
//!
//!     cargo run --release --example export_assets -- assets

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use spinenav::acceptance::STUDY_OPERATOR;
use spinenav::calibration::PosePair;
use spinenav::io::write_stl_binary;
use spinenav::registration::RegistrationParams;
use spinenav::service::{scripted_session, write_log, Script, DEFAULT_TICK_RATE};
use spinenav::sim::{lumbar_phantom, MeshBuilder, Noise, Scenario, ScenarioConfig};
use spinenav::{FrameId, RigidTransform, Vec3};

fn write_json(path: &Path, value: &(impl serde::Serialize + ?Sized)) {
    let text = serde_json::to_string_pretty(value).unwrap();
    std::fs::write(path, text + "\n").unwrap();
}

fn main() {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "assets".into()));
    let fixtures = dir.join("fixtures");
    std::fs::create_dir_all(&fixtures).unwrap();

    write_stl_binary(
        &lumbar_phantom(),
        BufWriter::new(File::create(dir.join("spine_phantom.stl")).unwrap()),
    )
    .unwrap();
    for (name, noise) in [
        ("phantom_zero_noise.json", Noise::zero()),
        ("phantom_study.json", Noise::study()),
    ] {
        let mut config = ScenarioConfig::new(7, noise);
        config.mesh = Some("spine_phantom.stl".into());
        write_json(&dir.join(name), &config);
    }

    // One facet-joint trial as an AR user would run it: calibrate, register
    // the virtual robot, aim with the gamepad and insert.
    let scenario = Scenario::load(&dir.join("phantom_study.json")).unwrap();
    let script = Script {
        targets: vec!["FJ-L3-L4-left".into()],
        operator: STUDY_OPERATOR,
        register: Some(RegistrationParams::default()),
    };
    let (log, records) = scripted_session(Arc::new(scenario), DEFAULT_TICK_RATE, &script).unwrap();
    write_log(&log, BufWriter::new(File::create(dir.join("fj_trial.jsonl")).unwrap())).unwrap();
    println!(
        "fj_trial.jsonl: {} commands, record {}",
        log.len(),
        serde_json::to_string(&records[0]).unwrap()
    );

    // Marker rigidly on the flange, camera at the robot base: X is the identity.
    let e_t_m = RigidTransform::from_axis_angle(&Vec3::new(1.0, 2.0, 0.5), 0.7, Vec3::new(12.0, -30.0, 85.0));
    let pairs: Vec<PosePair> = (0..12)
        .map(|i| {
            let a = i as f64;
            let axis = Vec3::new((1.3 * a).sin(), (0.7 * a).cos(), 0.4 + 0.1 * a);
            let t = Vec3::new(400.0 + 20.0 * a, -150.0 + 25.0 * a, 300.0 - 10.0 * a);
            let r_t_e = RigidTransform::from_axis_angle(&axis, 0.3 + 0.1 * a, t);
            PosePair::new(r_t_e.inverse(), r_t_e.compose(&e_t_m), i)
        })
        .collect();
    write_json(&fixtures.join("calib_identity_pairs.json"), &pairs);
    write_json(&fixtures.join("calib_two_pairs.json"), &pairs[..2]);

    let mut cube = MeshBuilder::new();
    cube.cuboid(&RigidTransform::identity(), Vec3::new(10.0, 10.0, 10.0));
    write_stl_binary(
        &cube.build(FrameId::Spine),
        BufWriter::new(File::create(fixtures.join("cube20.stl")).unwrap()),
    )
    .unwrap();
}
