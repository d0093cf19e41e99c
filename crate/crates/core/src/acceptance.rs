//! The headline checks of the pipeline, runnable from the `acceptance` test
//! target and from `spinenav accept`. Each check returns a one-line verdict.

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{Quaternion, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::calibration::{solve_handeye, PosePair};
use crate::geometry::{PointCloud, TriangleMesh};
use crate::guidance::{raycast_exhaustive, raycast_local, HitResult, Ray};
use crate::registration::{global_register, icp_refine, sample_virtual, IcpParams, RegistrationParams};
use crate::service::{replay, scripted_session, serve, LogEntry, Script, ServerConfig, TrialRecord, DEFAULT_TICK_RATE};
use crate::sim::{surface_samples, tre_trial, Joints, Noise, Operator, Scenario, VirtualRobot, DOF};
use crate::transform::{FrameId, Point3, RigidTransform, TransformGraph, Vec3};

#[derive(Clone, Debug, Serialize)]
pub struct Verdict {
    pub id: u8,
    pub title: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "[{}] {}. {}: {} ({:.1} s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.title,
            self.detail,
            self.seconds
        )
    }
}

#[derive(Clone, Debug)]
pub struct AcceptConfig {
    /// Base seed; every check derives its own streams from it.
    pub seed: u64,
    /// Worker threads for the parallel half of the determinism check.
    pub threads: usize,
    pub liveness: Duration,
    pub clients: usize,
}

impl Default for AcceptConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: 4,
            liveness: Duration::from_secs(60),
            clients: 4,
        }
    }
}

pub const TITLES: [&str; 9] = [
    "hand-eye exactness",
    "calibration chain",
    "TRE regime",
    "registration recovery",
    "ICP monotonicity",
    "raycast equivalence",
    "end-to-end placement",
    "replay determinism",
    "service liveness",
];

/// Runs one check by number (1 to 9).
pub fn run(id: u8, cfg: &AcceptConfig) -> Verdict {
    let start = Instant::now();
    let (passed, detail) = match id {
        1 => handeye_exactness(cfg.seed),
        2 => calibration_chain(cfg.seed),
        3 => tre_regime(cfg.seed),
        4 => registration_recovery(cfg.seed),
        5 => icp_monotonicity(cfg.seed),
        6 => raycast_equivalence(cfg.seed),
        7 => end_to_end_placement(cfg.seed),
        8 => replay_determinism(cfg.seed, cfg.threads),
        9 => service_liveness(cfg.seed, cfg.liveness, cfg.clients),
        _ => panic!("no acceptance check {id}"),
    };
    Verdict {
        id,
        title: TITLES[id as usize - 1],
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

pub fn run_all(cfg: &AcceptConfig) -> Vec<Verdict> {
    (1..=9).map(|id| run(id, cfg)).collect()
}

fn rng(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ salt)
}

fn random_transform(rng: &mut impl Rng, max_translation: f64) -> RigidTransform {
    let q = Quaternion::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    let mut t = || rng.random_range(-max_translation..max_translation);
    RigidTransform::new(UnitQuaternion::from_quaternion(q), Vec3::new(t(), t(), t()))
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64;
    (m, var.sqrt())
}

fn max(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, f64::max)
}

fn handeye_exactness(seed: u64) -> (bool, String) {
    let mut rng = rng(seed, 1);
    let mut cases = Vec::new();
    for _ in 0..10 {
        let x = random_transform(&mut rng, 2000.0);
        let e_t_m = random_transform(&mut rng, 150.0);
        let pairs: Vec<PosePair> = (0..30)
            .map(|i| {
                let axis = Vec3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                );
                let t = Vec3::new(
                    rng.random_range(300.0..700.0),
                    rng.random_range(-300.0..300.0),
                    rng.random_range(100.0..500.0),
                );
                let r_t_e = RigidTransform::from_axis_angle(&axis, rng.random_range(0.3..1.6), t);
                // o_t_m = X^-1 r_t_e e_t_m
                PosePair::new(r_t_e.inverse(), x.inverse().compose(&r_t_e).compose(&e_t_m), i)
            })
            .collect();
        cases.push((x, pairs));
    }
    let start = Instant::now();
    let solved: Vec<_> = cases.iter().map(|(_, p)| solve_handeye(p)).collect();
    let secs = start.elapsed().as_secs_f64();
    let mut worst_t: f64 = 0.0;
    let mut worst_r: f64 = 0.0;
    for ((x, _), s) in cases.iter().zip(&solved) {
        match s {
            Ok(s) => {
                worst_t = worst_t.max(s.x.translation_distance(x));
                worst_r = worst_r.max(s.x.angle_to(x));
            }
            Err(e) => return (false, format!("solver failed: {e}")),
        }
    }
    (
        worst_t <= 1e-6 && worst_r <= 1e-8 && secs < 1.0,
        format!("worst {worst_t:.1e} mm / {worst_r:.1e} rad over 10 X x 30 pairs, solve time {secs:.3} s"),
    )
}

fn calibration_chain(seed: u64) -> (bool, String) {
    use FrameId::*;
    let mut rng = rng(seed, 2);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let s_t_c = random_transform(&mut rng, 500.0);
        let c_t_o = random_transform(&mut rng, 2000.0);
        let r_t_o = random_transform(&mut rng, 2000.0);
        let v_t_r = random_transform(&mut rng, 2000.0);
        let v_t_h = random_transform(&mut rng, 2000.0);
        let mut g = TransformGraph::new();
        let mut put = |a, b, a_t_b: RigidTransform, rng: &mut ChaCha8Rng| {
            // Store either direction; the graph must not care.
            if rng.random_bool(0.5) {
                g.insert(a, b, a_t_b, 0).unwrap();
            } else {
                g.insert(b, a, a_t_b.inverse(), 0).unwrap();
            }
        };
        put(Spine, Cbct, s_t_c, &mut rng);
        put(Cbct, OpticalCamera, c_t_o, &mut rng);
        put(RobotBase, OpticalCamera, r_t_o, &mut rng);
        put(VirtualWorld, RobotBase, v_t_r, &mut rng);
        put(VirtualWorld, Viewer, v_t_h, &mut rng);
        // Side branches that lie off the S..H path.
        put(OpticalCamera, Marker, random_transform(&mut rng, 2000.0), &mut rng);
        put(RobotBase, EndEffector, random_transform(&mut rng, 1000.0), &mut rng);
        put(EndEffector, Ultrasound, random_transform(&mut rng, 100.0), &mut rng);
        let expected = s_t_c
            .compose(&c_t_o)
            .compose(&r_t_o.inverse())
            .compose(&v_t_r.inverse())
            .compose(&v_t_h)
            .to_matrix();
        let got = match g.query(Spine, Viewer) {
            Ok(t) => t.to_matrix(),
            Err(e) => return (false, format!("query failed: {e}")),
        };
        worst = worst.max((got - expected).abs().max());
    }
    (
        worst <= 1e-9,
        format!("worst matrix entry difference {worst:.1e} over 1000 graphs"),
    )
}

fn tre_regime(seed: u64) -> (bool, String) {
    let noise = Noise {
        tracker_sigma_mm: 0.3,
        tracker_sigma_deg: 0.05,
        localization_sigma_mm: Noise::study().localization_sigma_mm,
        ..Noise::zero()
    };
    let mut v = Vec::new();
    for i in 0..100 {
        match tre_trial(&Scenario::phantom(seed.wrapping_add(i), noise), 0) {
            Ok(t) => v.push(t),
            Err(e) => return (false, format!("trial {i}: {e}")),
        }
    }
    let (m, sd) = mean_sd(&v);
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    (
        (0.5..=4.0).contains(&m),
        format!(
            "TRE {m:.2} +/- {sd:.2} mm over 100 scenarios (range {lo:.2}..{:.2})",
            max(v.iter().cloned())
        ),
    )
}

/// Clouds for one apply-and-recover run: real points in the robot base and
/// virtual samples of the same pose placed at `v_t_r`.
pub fn recovery_clouds(
    scenario: &Scenario,
    v_t_r: &RigidTransform,
    count: usize,
    depth_sigma: f64,
    clutter: f64,
    seed: u64,
) -> (PointCloud, PointCloud) {
    let q = scenario.config.start_joints;
    let model = VirtualRobot {
        model: &scenario.robot,
        v_t_r: *v_t_r,
    };
    let virt = sample_virtual(&model, &q, count, seed).expect("robot has area");
    let mut real = virt.transformed(&v_t_r.inverse(), FrameId::RobotBase);
    real.normals = None;
    let mut rng = rng(seed, 4);
    if depth_sigma > 0.0 {
        let n = Normal::new(0.0, depth_sigma).unwrap();
        for p in &mut real.points {
            *p += Vec3::new(n.sample(&mut rng), n.sample(&mut rng), n.sample(&mut rng));
        }
    }
    let bounds = real.bounds().padded(50.0);
    let replaced = (clutter * count as f64).round() as usize;
    for i in rand::seq::index::sample(&mut rng, count, replaced) {
        real.points[i] = Point3::new(
            rng.random_range(bounds.min.x..bounds.max.x),
            rng.random_range(bounds.min.y..bounds.max.y),
            rng.random_range(bounds.min.z..bounds.max.z),
        );
    }
    (real, virt)
}

fn registration_recovery(seed: u64) -> (bool, String) {
    let scenario = Scenario::phantom(seed, Noise::zero());
    let mut rng = rng(seed, 3);
    let params = RegistrationParams::default();
    let mut ok = true;
    let mut parts = Vec::new();
    for (sigma, clutter, trim) in [(0.0, 0.0, params.icp.trim_fraction), (3.0, 0.3, 0.35)] {
        let mut worst = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        let mut rmse = Vec::new();
        for run in 0..2 {
            let v_t_r = random_transform(&mut rng, 500.0);
            let (real, virt) =
                recovery_clouds(&scenario, &v_t_r, params.virtual_count, sigma, clutter, seed * 16 + run);
            let start = Instant::now();
            let result = global_register(&real, &virt, &params.global).map(|g| {
                icp_refine(
                    &real,
                    &virt,
                    &g.transform,
                    &IcpParams {
                        trim_fraction: trim,
                        ..params.icp
                    },
                )
            });
            let secs = start.elapsed().as_secs_f64();
            let Ok(r) = result else {
                return (false, format!("global stage failed at sigma {sigma}"));
            };
            let dt = r.transform.translation_distance(&v_t_r);
            let dr = r.transform.angle_to(&v_t_r).to_degrees();
            worst = (worst.0.max(dt), worst.1.max(dr), worst.2.max(secs), worst.3.max(r.rmse));
            rmse.push(r.rmse);
            ok &= secs < 30.0;
            if sigma == 0.0 {
                ok &= dt <= 0.1 && dr <= 0.05;
            } else {
                ok &= (2.0..=20.0).contains(&r.rmse);
            }
        }
        parts.push(if sigma == 0.0 {
            format!("clean: error {:.1e} mm / {:.1e} deg", worst.0, worst.1)
        } else {
            let lo = rmse.iter().cloned().fold(f64::INFINITY, f64::min);
            format!(
                "noisy: rmse {lo:.2}..{:.2} mm, error {:.2} mm / {:.2} deg",
                worst.3, worst.0, worst.1
            )
        });
        parts.push(format!("slowest {:.1} s", worst.2));
    }
    (ok, parts.join(", "))
}

fn icp_monotonicity(seed: u64) -> (bool, String) {
    let scenario = Scenario::phantom(seed, Noise::zero());
    let kin = &scenario.robot.kinematics;
    let mut violations = 0;
    let mut iterations = 0;
    for i in 0..1000u64 {
        let mut rng = rng(seed, 5 << 32 | i);
        let mut q: Joints = [0.0; DOF];
        for (j, row) in kin.rows.iter().enumerate().take(DOF) {
            q[j] = rng.random_range(-0.8 * row.limit..0.8 * row.limit);
        }
        let virt = surface_samples(&scenario.robot, &q, 1500, rng.random());
        let mut real = surface_samples(&scenario.robot, &q, 400, rng.random());
        let sigma = rng.random_range(0.0..3.0);
        let n = Normal::new(0.0, 1.0).unwrap();
        for p in &mut real.points {
            *p += Vec3::new(n.sample(&mut rng), n.sample(&mut rng), n.sample(&mut rng)) * sigma;
        }
        let axis = Vec3::new(n.sample(&mut rng), n.sample(&mut rng), n.sample(&mut rng));
        let shift = Vec3::new(n.sample(&mut rng), n.sample(&mut rng), n.sample(&mut rng)) * 10.0;
        let init = RigidTransform::from_axis_angle(&axis, rng.random_range(0.0..0.3), shift);
        let params = IcpParams {
            max_iterations: 50,
            trim_fraction: rng.random_range(0.0..0.4),
            ..IcpParams::default()
        };
        let r = icp_refine(&real, &virt, &init, &params);
        iterations += r.objective_history.len();
        violations += r.objective_history.windows(2).filter(|w| w[1] > w[0]).count();
    }
    (
        violations == 0,
        format!("{violations} increases over 1000 runs, {iterations} iterates"),
    )
}

/// A random triangle soup inside a 100 mm cube, some triangles sharing
/// vertices so rays cross edges.
fn random_mesh(rng: &mut ChaCha8Rng) -> TriangleMesh {
    let nv = rng.random_range(12..120);
    let verts: Vec<Point3> = (0..nv)
        .map(|_| {
            Point3::new(
                rng.random_range(-50.0..50.0),
                rng.random_range(-50.0..50.0),
                rng.random_range(-50.0..50.0),
            )
        })
        .collect();
    let nt = rng.random_range(10..300);
    let tris = (0..nt)
        .map(|_| {
            let a = rng.random_range(0..nv);
            [
                a,
                (a + rng.random_range(1..nv)) % nv,
                (a + rng.random_range(1..nv)) % nv,
            ]
            .map(|i| i as u32)
        })
        .filter(|t| t[1] != t[2])
        .collect();
    TriangleMesh::new(verts, tris, FrameId::Spine).expect("valid indices").0
}

fn quad(z: f64) -> [[Point3; 3]; 2] {
    let p = |x, y| Point3::new(x, y, z);
    [
        [p(-10.0, -10.0), p(10.0, -10.0), p(10.0, 10.0)],
        [p(-10.0, -10.0), p(10.0, 10.0), p(-10.0, 10.0)],
    ]
}

fn raycast_equivalence(seed: u64) -> (bool, String) {
    let mut rng = rng(seed, 6);
    let mut mismatches = 0;
    let mut hits = 0;
    let mut rays = 0;
    for _ in 0..200 {
        let mesh = random_mesh(&mut rng);
        if mesh.is_empty() {
            continue;
        }
        for _ in 0..500 {
            let o = Point3::new(
                rng.random_range(-80.0..80.0),
                rng.random_range(-80.0..80.0),
                rng.random_range(-80.0..80.0),
            );
            let aim = Point3::new(
                rng.random_range(-60.0..60.0),
                rng.random_range(-60.0..60.0),
                rng.random_range(-60.0..60.0),
            );
            let Ok(ray) = Ray::new(o, aim - o, FrameId::Spine) else {
                continue;
            };
            let (a, b) = (raycast_local(&ray, &mesh), raycast_exhaustive(&ray, &mesh));
            let same = a.hit == b.hit
                && a.triangle_index == b.triangle_index
                && match (a.t_star, b.t_star) {
                    (Some(x), Some(y)) => (x - y).abs() <= 1e-7,
                    (None, None) => true,
                    _ => false,
                };
            mismatches += usize::from(!same);
            hits += usize::from(a.hit);
            rays += 1;
        }
    }

    // Stacked planes at z = 0, 10, 20; hits must be the nearest one in front.
    let soup: Vec<[Point3; 3]> = [20.0, 0.0, 10.0].into_iter().flat_map(quad).collect();
    let stack = TriangleMesh::from_soup(&soup, FrameId::Spine).expect("fixture").0;
    let cases = [
        (-5.0, 1.0, 5.0),
        (5.0, 1.0, 5.0),
        (15.0, 1.0, 5.0),
        (25.0, -1.0, 5.0),
        (15.0, -1.0, 5.0),
    ];
    let mut rule_ok = true;
    for (z0, dz, want) in cases {
        let ray = Ray::new(Point3::new(1.0, 2.0, z0), Vec3::new(0.0, 0.0, dz), FrameId::Spine).unwrap();
        for h in [raycast_local(&ray, &stack), raycast_exhaustive(&ray, &stack)] {
            rule_ok &= h.hit && h.t_star.is_some_and(|t| (t - want).abs() < 1e-9);
        }
    }
    let away = Ray::new(Point3::new(1.0, 2.0, 30.0), Vec3::new(0.0, 0.0, 1.0), FrameId::Spine).unwrap();
    let miss = raycast_local(&away, &stack);
    let suppressed = miss == HitResult::miss()
        && serde_json::to_string(&miss).is_ok_and(|s| s == r#"{"hit":false}"#)
        && raycast_exhaustive(&away, &stack) == miss;
    (
        mismatches == 0 && rule_ok && suppressed,
        format!(
            "{mismatches} mismatches over {rays} rays ({hits} hits), nearest-hit fixtures {}, miss suppression {}",
            if rule_ok { "ok" } else { "WRONG" },
            if suppressed { "ok" } else { "WRONG" }
        ),
    )
}

/// Gamepad resolution of the scripted study operator.
pub const STUDY_OPERATOR: Operator = Operator::Gamepad {
    step_mm: 2.0,
    step_deg: 0.5,
};

fn session_errors(scenario: Scenario, operator: Operator) -> Result<Vec<f64>, String> {
    let script = Script {
        targets: scenario.targets().iter().map(|t| t.id.clone()).collect(),
        operator,
        register: Some(RegistrationParams::default()),
    };
    let (_, records) = scripted_session(Arc::new(scenario), DEFAULT_TICK_RATE, &script).map_err(|e| e.to_string())?;
    records
        .iter()
        .map(|r| {
            r.placement_error_mm
                .ok_or_else(|| "trial without an insertion".to_string())
        })
        .collect()
}

fn end_to_end_placement(seed: u64) -> (bool, String) {
    let clean = match session_errors(Scenario::phantom(seed, Noise::zero()), Operator::Exact) {
        Ok(e) => e,
        Err(e) => return (false, format!("zero-noise session: {e}")),
    };
    let mut noisy = Vec::new();
    for i in 0..3 {
        match session_errors(
            Scenario::phantom(seed.wrapping_add(100 + i), Noise::study()),
            STUDY_OPERATOR,
        ) {
            Ok(e) => noisy.extend(e),
            Err(e) => return (false, format!("study-noise session {i}: {e}")),
        }
    }
    let clean_max = max(clean.iter().cloned());
    let (m, sd) = mean_sd(&noisy);
    let noisy_max = max(noisy.iter().cloned());
    (
        clean_max < 0.1 && noisy_max < 10.0,
        format!(
            "zero noise worst {clean_max:.1e} mm on {} targets; study noise {m:.2} +/- {sd:.2} mm, worst {noisy_max:.2} mm over {} trials",
            clean.len(),
            noisy.len()
        ),
    )
}

/// Deterministic command log touching every stage: calibration,
/// registration and one gamepad trial per target kind.
pub fn determinism_log(seed: u64) -> Result<(Arc<Scenario>, Vec<LogEntry>), String> {
    let scenario = Arc::new(Scenario::phantom(seed, Noise::study()));
    let script = Script {
        targets: vec!["FJ-L3-L4-left".into(), "LP-L2-L3".into()],
        operator: STUDY_OPERATOR,
        register: Some(RegistrationParams::default()),
    };
    let (log, _) = scripted_session(Arc::clone(&scenario), DEFAULT_TICK_RATE, &script).map_err(|e| e.to_string())?;
    Ok((scenario, log))
}

fn replay_in_pool(scenario: &Arc<Scenario>, log: &[LogEntry], threads: usize) -> Result<(String, String), String> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| e.to_string())?;
    pool.install(|| {
        let (outcome, record): (_, TrialRecord) =
            replay(Arc::clone(scenario), DEFAULT_TICK_RATE, log).map_err(|e| e.to_string())?;
        let states = serde_json::to_string(&outcome.states).map_err(|e| e.to_string())?;
        Ok((serde_json::to_string(&record).map_err(|e| e.to_string())?, states))
    })
}

fn replay_determinism(seed: u64, threads: usize) -> (bool, String) {
    let (scenario, log) = match determinism_log(seed) {
        Ok(x) => x,
        Err(e) => return (false, format!("script: {e}")),
    };
    let runs: Result<Vec<_>, _> = [1, 1, threads.max(2)]
        .iter()
        .map(|&n| replay_in_pool(&scenario, &log, n))
        .collect();
    match runs {
        Ok(r) => {
            let same = r.windows(2).all(|w| w[0] == w[1]);
            (
                same,
                format!(
                    "{} log entries; record and {} kB of state messages {} across 1, 1 and {} threads",
                    log.len(),
                    r[0].1.len() / 1024,
                    if same { "identical" } else { "DIFFER" },
                    threads.max(2)
                ),
            )
        }
        Err(e) => (false, e),
    }
}

fn stub_client(addr: std::net::SocketAddr, stop: Arc<AtomicBool>, id: usize) -> std::io::Result<u64> {
    let stream = TcpStream::connect(addr)?;
    stream.set_read_timeout(Some(Duration::from_millis(200)))?;
    let mut writer = stream.try_clone()?;
    let mut reader = BufReader::new(stream);
    let mut line = String::new();
    let mut received = 0;
    let mut last_jog = Instant::now();
    let mut seq = 0;
    while !stop.load(Ordering::Relaxed) {
        line.clear();
        match reader.read_line(&mut line) {
            Ok(0) => break,
            Ok(_) => received += 1,
            Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {}
            Err(e) => return Err(e),
        }
        if last_jog.elapsed() >= Duration::from_millis(500) {
            let delta = if seq % 2 == 0 { 1.0 } else { -1.0 };
            let axis = ["x", "y", "z", "rz"][id % 4];
            writeln!(
                writer,
                r#"{{"type":"command","seq":{seq},"payload":{{"cmd":"jog","axis":"{axis}","delta":{delta}}}}}"#
            )?;
            seq += 1;
            last_jog = Instant::now();
        }
    }
    Ok(received)
}

fn service_liveness(seed: u64, duration: Duration, clients: usize) -> (bool, String) {
    let config = ServerConfig {
        addr: "127.0.0.1:0".parse().unwrap(),
        ..ServerConfig::default()
    };
    let server = match serve(Arc::new(Scenario::phantom(seed, Noise::study())), config) {
        Ok(s) => s,
        Err(e) => return (false, format!("bind: {e}")),
    };
    let addr = server.local_addr();
    let stop = Arc::new(AtomicBool::new(false));
    let workers: Vec<_> = (0..clients)
        .map(|i| {
            let stop = Arc::clone(&stop);
            std::thread::spawn(move || stub_client(addr, stop, i))
        })
        .collect();
    std::thread::sleep(duration);
    stop.store(true, Ordering::Relaxed);
    let received: Vec<u64> = workers
        .into_iter()
        .map(|w| w.join().ok().and_then(Result::ok).unwrap_or(0))
        .collect();
    let stats = server.stop();
    let limit = 0.2 * stats.period_ms;
    let all_fed = received.iter().all(|&r| r > 0);
    (
        stats.max_jitter_ms < limit && all_fed,
        format!(
            "{} ticks in {:.0} s, max jitter {:.2} ms (limit {limit:.2}), mean interval {:.2} ms, {} clients, {} drops",
            stats.ticks,
            duration.as_secs_f64(),
            stats.max_jitter_ms,
            stats.mean_interval_ms,
            received.iter().filter(|&&r| r > 0).count(),
            stats.dropped_messages
        ),
    )
}
