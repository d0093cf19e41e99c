//! The `spinenav` binary end to end, consuming only `--json` output.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use spinenav::calibration::HandEyeSolution;
use spinenav::guidance::{raycast_exhaustive, HitResult, Ray};
use spinenav::io::{load_mesh, write_ply, PlyFormat};
use spinenav::registration::{sample_virtual, RegistrationResult};
use spinenav::service::TrialRecord;
use spinenav::sim::{Noise, Scenario, VirtualRobot, START_JOINTS};
use spinenav::{FrameId, Point3, PointCloud, RigidTransform, Vec3};

fn assets() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../assets")
}

fn spinenav(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spinenav"))
        .args(args)
        .output()
        .unwrap()
}

fn ok_json(args: &[&str]) -> Value {
    let out = spinenav(args);
    assert_eq!(
        out.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

/// Exit code and the single JSON error object on stderr.
fn domain_error(args: &[&str]) -> Value {
    let out = spinenav(args);
    assert_eq!(
        out.status.code(),
        Some(1),
        "stdout: {}",
        String::from_utf8_lossy(&out.stdout)
    );
    let text = String::from_utf8(out.stderr).unwrap();
    assert_eq!(text.trim().lines().count(), 1, "{text}");
    serde_json::from_str::<Value>(&text).unwrap()["error"].clone()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn calibrate_identity_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let output = dir.path().join("solution.json");
    let input = assets().join("fixtures/calib_identity_pairs.json");
    let v = ok_json(&[
        "--json",
        "calibrate",
        "--input",
        path_str(&input),
        "--output",
        path_str(&output),
    ]);
    let sol: HandEyeSolution = serde_json::from_value(v).unwrap();
    assert!(sol.x.approx_eq(&RigidTransform::identity(), 1e-9, 1e-9), "{:?}", sol.x);
    assert!(sol.translation_residual < 1e-9);
    let written: HandEyeSolution = serde_json::from_str(&std::fs::read_to_string(&output).unwrap()).unwrap();
    assert_eq!(written, sol);
}

#[test]
fn calibrate_errors_map_to_exit_codes() {
    let two = assets().join("fixtures/calib_two_pairs.json");
    let e = domain_error(&["--json", "calibrate", "--input", path_str(&two)]);
    assert_eq!(e["code"], "InsufficientData");

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "[{\"robot\":").unwrap();
    assert_eq!(
        spinenav(&["calibrate", "--input", path_str(&bad)]).status.code(),
        Some(2)
    );
    assert_eq!(spinenav(&["calibrate"]).status.code(), Some(2));
}

#[test]
fn raycast_cube_fixture() {
    let cube = assets().join("fixtures/cube20.stl");
    let cube = path_str(&cube);
    let hit: HitResult = serde_json::from_value(ok_json(&[
        "--json",
        "raycast",
        "--mesh",
        cube,
        "--origin",
        "1,2,-50",
        "--direction",
        "0,0,2",
    ]))
    .unwrap();
    assert!(hit.hit);
    assert!((hit.t_star.unwrap() - 40.0).abs() < 1e-12);
    assert!((hit.point.unwrap() - Point3::new(1.0, 2.0, -10.0)).norm() < 1e-12);

    let out = spinenav(&[
        "--json",
        "raycast",
        "--mesh",
        cube,
        "--origin",
        "1,2,-50",
        "--direction",
        "0,0,-1",
    ]);
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), r#"{"hit":false}"#);
}

#[test]
fn raycast_brute_flag_gives_identical_output() {
    let mesh = assets().join("spine_phantom.stl");
    let (spine, _) = load_mesh(&mesh, FrameId::Spine).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..12 {
        let o = format!(
            "{},{},{}",
            rng.random_range(-40.0..40.0),
            rng.random_range(-90.0..90.0),
            120.0
        );
        let d = format!("{},{},-1", rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
        let args = |brute: bool| {
            let mut a = vec![
                "--json",
                "raycast",
                "--mesh",
                path_str(&mesh),
                "--origin",
                &o,
                "--direction",
                &d,
            ];
            if brute {
                a.push("--brute");
            }
            spinenav(&a).stdout
        };
        let (bvh, brute) = (args(false), args(true));
        assert_eq!(bvh, brute);
        // And both agree with the library's exhaustive scan.
        let p: Vec<f64> = o.split(',').map(|x| x.parse().unwrap()).collect();
        let q: Vec<f64> = d.split(',').map(|x| x.parse().unwrap()).collect();
        let ray = Ray::new(
            Point3::new(p[0], p[1], p[2]),
            Vec3::new(q[0], q[1], q[2]),
            FrameId::Spine,
        )
        .unwrap();
        let parsed: HitResult = serde_json::from_slice(&bvh).unwrap();
        assert_eq!(parsed, raycast_exhaustive(&ray, &spine));
    }
}

const SMALL_PARAMS: &str = r#"{"virtual_count":6000,"global":{"max_virtual_keypoints":6000}}"#;

/// A depth frame of the robot at the ready pose, optionally moved by `r_t_v`
/// and perturbed.
fn robot_frame(dir: &Path, name: &str, r_t_v: &RigidTransform, sigma: f64, seed: u64) -> PathBuf {
    let scenario = Scenario::phantom(0, Noise::zero());
    let model = VirtualRobot {
        model: &scenario.robot,
        v_t_r: RigidTransform::identity(),
    };
    let virt = sample_virtual(&model, &START_JOINTS, 6000, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    let points = virt
        .points
        .iter()
        .map(|p| {
            let n = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            r_t_v.apply_point(p) + n * sigma
        })
        .collect();
    let path = dir.join(name);
    let cloud = PointCloud::new(points, FrameId::RobotBase);
    write_ply(
        &cloud,
        PlyFormat::BinaryLittleEndian,
        std::fs::File::create(&path).unwrap(),
    )
    .unwrap();
    path
}

fn joints_arg() -> String {
    START_JOINTS.iter().map(|q| q.to_string()).collect::<Vec<_>>().join(",")
}

#[test]
fn register_identity_and_noisy_fixtures() {
    let dir = tempfile::tempdir().unwrap();
    let params = dir.path().join("params.json");
    std::fs::write(&params, SMALL_PARAMS).unwrap();
    let joints = joints_arg();
    let run = |real: &Path, voxel: &str| -> RegistrationResult {
        let v = ok_json(&[
            "--json",
            "register",
            "--real",
            path_str(real),
            "--joints",
            &joints,
            "--params",
            path_str(&params),
            "--voxel",
            voxel,
            "--seed",
            "9",
        ]);
        serde_json::from_value(v).unwrap()
    };

    // The same samples the command draws for the virtual side.
    let same = robot_frame(dir.path(), "same.ply", &RigidTransform::identity(), 0.0, 9);
    let r = run(&same, "0.001");
    assert!(
        r.transform.approx_eq(&RigidTransform::identity(), 1e-4, 1e-4),
        "{:?}",
        r.transform
    );

    let moved = RigidTransform::from_axis_angle(&Vec3::new(0.2, -0.5, 1.0), 0.6, Vec3::new(120.0, -60.0, 35.0));
    let noisy = robot_frame(dir.path(), "noisy.ply", &moved, 2.0, 21);
    let r = run(&noisy, "4");
    // v_t_r undoes the motion applied to the real frame.
    assert!(r.transform.translation_distance(&moved.inverse()) < 2.0);
    assert!(r.transform.angle_to(&moved.inverse()) < 0.5f64.to_radians());
    // Frozen: dominated by the spacing of 6000 samples over the arm, not by the noise.
    assert!((5.5..7.5).contains(&r.rmse), "rmse {}", r.rmse);
}

#[test]
fn register_rejects_empty_cloud_and_missing_seed() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.ply");
    write_ply(
        &PointCloud::empty(FrameId::RobotBase),
        PlyFormat::Ascii,
        std::fs::File::create(&empty).unwrap(),
    )
    .unwrap();
    let joints = joints_arg();
    let e = domain_error(&[
        "--json",
        "register",
        "--real",
        path_str(&empty),
        "--joints",
        &joints,
        "--seed",
        "1",
    ]);
    assert_eq!(e["code"], "EmptyCloud");
    let out = spinenav(&["register", "--real", path_str(&empty), "--joints", &joints]);
    assert_eq!(out.status.code(), Some(2));
}

fn replay(log: &Path, seed: &str, extra: &[&str]) -> Vec<u8> {
    let scenario = assets().join("phantom_study.json");
    let mut args = vec![
        "--json",
        "replay",
        "--scenario",
        path_str(&scenario),
        "--log",
        path_str(log),
        "--seed",
        seed,
    ];
    args.extend_from_slice(extra);
    let out = spinenav(&args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

#[test]
fn replay_canned_facet_joint_session() {
    let log = assets().join("fj_trial.jsonl");
    let first = replay(&log, "7", &["--threads", "1"]);
    let record: TrialRecord = serde_json::from_slice(&first).unwrap();
    assert_eq!(record.target_id.as_deref(), Some("FJ-L3-L4-left"));
    let error = record.placement_error_mm.unwrap();
    assert!(error < 10.0, "{error}");
    assert_eq!(record.seed, 7);
    // Byte-identical across runs and thread counts.
    assert_eq!(replay(&log, "7", &[]), first);
    assert_eq!(replay(&log, "7", &["--threads", "3"]), first);
    // Same commands under a different seed see different sensor noise.
    let other: TrialRecord = serde_json::from_slice(&replay(&log, "8", &[])).unwrap();
    assert_ne!(other, record);
}

#[test]
fn replay_of_empty_log_has_zero_commands() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("empty.jsonl");
    std::fs::write(&log, "").unwrap();
    let record: TrialRecord = serde_json::from_slice(&replay(&log, "7", &[])).unwrap();
    assert_eq!(record.command_count, 0);
    assert_eq!(record.placement_error_mm, None);
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(&config, r#"{"seed": 4}"#).unwrap();
    let log = dir.path().join("empty.jsonl");
    std::fs::write(&log, "").unwrap();
    let run = |extra: &[&str]| -> TrialRecord {
        let mut args = vec![
            "--json",
            "--config",
            path_str(&config),
            "replay",
            "--log",
            path_str(&log),
        ];
        args.extend_from_slice(extra);
        serde_json::from_value(ok_json(&args)).unwrap()
    };
    assert_eq!(run(&[]).seed, 4);
    assert_eq!(run(&["--seed", "11"]).seed, 11);
}

#[test]
fn scenario_validation() {
    for name in ["phantom_zero_noise.json", "phantom_study.json"] {
        let v = ok_json(&["--json", "scenario", "validate", path_str(&assets().join(name))]);
        assert_eq!(v["valid"], true);
        assert_eq!(v["targets"], 12);
    }
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(
        &bad,
        r#"{"seed": 1, "calibration_pairs": 2, "noise": {"outlier_fraction": 1.5}}"#,
    )
    .unwrap();
    let e = domain_error(&["scenario", "validate", path_str(&bad)]);
    assert_eq!(e["code"], "InvalidScenario");
    let msg = e["message"].as_str().unwrap();
    assert!(
        msg.contains("calibration_pairs") && msg.contains("outlier_fraction"),
        "{msg}"
    );
}

#[test]
fn scenario_init_round_trips_through_validate() {
    let dir = tempfile::tempdir().unwrap();
    let out = spinenav(&["scenario", "init", "--seed", "5", "--study-noise"]);
    assert_eq!(out.status.code(), Some(0));
    let file = dir.path().join("s.json");
    std::fs::write(&file, &out.stdout).unwrap();
    assert_eq!(ok_json(&["--json", "scenario", "validate", path_str(&file)])["seed"], 5);
}

#[test]
fn serve_runs_for_a_fixed_duration() {
    let v = ok_json(&[
        "--json",
        "serve",
        "--seed",
        "1",
        "--addr",
        "127.0.0.1:0",
        "--duration",
        "0.5",
    ]);
    assert!(v["ticks"].as_u64().unwrap() >= 10, "{v}");
    assert_eq!(v["clients_seen"], 0);
}

#[test]
fn accept_runs_selected_checks() {
    let out = spinenav(&["--json", "accept", "--seed", "0", "--only", "1,2,6"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let lines: Vec<Value> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(
        lines.iter().map(|v| v["id"].as_u64().unwrap()).collect::<Vec<_>>(),
        [1, 2, 6]
    );
    assert!(lines.iter().all(|v| v["passed"] == true));
    assert_eq!(
        spinenav(&["accept", "--seed", "0", "--only", "12"]).status.code(),
        Some(2)
    );
}
