//! Batch front end behind the `spinenav` binary. Every subcommand is a thin
//! wrapper over a library call.
//!
//! Exit status: 0 on success, 1 for a domain error (reported as one JSON
//! object on stderr), 2 for a usage error or unreadable input.

use std::ffi::OsString;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::acceptance::{self, AcceptConfig};
use crate::calibration::{parse_pose_pairs, solve_handeye};
use crate::geometry::{Aabb, PointCloud, TriangleMesh};
use crate::guidance::{raycast_exhaustive, raycast_local, Ray};
use crate::io::{load_mesh, parse_ply};
use crate::registration::{register_robot, PosedModel, RegistrationError, RegistrationParams};
use crate::service::{parse_log, replay, serve, ReplayError, ServerConfig, DEFAULT_TICK_RATE};
use crate::sim::{Noise, Scenario, ScenarioConfig, ScenarioError, VirtualRobot};
use crate::transform::{FrameId, Point3, RigidTransform, TransformGraph, Vec3};

#[derive(Debug, Parser)]
#[command(
    name = "spinenav",
    version,
    about = "Headless navigation pipeline: calibration, registration, guidance, simulation"
)]
pub struct Cli {
    /// Machine-readable output on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    /// Worker threads for data-parallel stages. Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// JSON file with defaults for flags; flags given on the command line win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve AX = XB from a JSON array of robot/marker pose pairs.
    Calibrate {
        #[arg(long)]
        input: PathBuf,
        /// Write the solution here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Register the virtual robot to depth frames.
    Register(RegisterArgs),
    /// First intersection of a ray with a mesh.
    Raycast {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true)]
        origin: Vec3,
        #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true)]
        direction: Vec3,
        /// Test every triangle instead of walking the hierarchy.
        #[arg(long)]
        brute: bool,
    },
    /// Check or generate scenario files.
    #[command(subcommand)]
    Scenario(ScenarioCommand),
    /// Re-run a command log against a scenario and print the trial record.
    Replay {
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        log: PathBuf,
        /// Overrides the scenario's own seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        tick_rate: Option<f64>,
    },
    /// Run the streaming session server.
    Serve {
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        addr: Option<SocketAddr>,
        #[arg(long)]
        tick_rate: Option<f64>,
        #[arg(long)]
        trial_log: Option<PathBuf>,
        #[arg(long)]
        command_log: Option<PathBuf>,
        /// Stop after this many seconds and print loop statistics.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Run the acceptance checks.
    Accept {
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated check numbers; all by default.
        #[arg(long, value_delimiter = ',')]
        only: Vec<u8>,
        #[arg(long, default_value_t = 60.0)]
        liveness_secs: f64,
    },
}

#[derive(Debug, Args)]
pub struct RegisterArgs {
    /// Depth frame in the robot base frame; repeat for several viewpoints.
    #[arg(long, required = true)]
    pub real: Vec<PathBuf>,
    /// Virtual robot surface, already posed. Without it the built-in robot
    /// model is posed at `--joints`.
    #[arg(long, conflicts_with = "joints")]
    pub mesh: Option<PathBuf>,
    #[arg(
        long,
        value_delimiter = ',',
        allow_hyphen_values = true,
        required_unless_present = "mesh"
    )]
    pub joints: Vec<f64>,
    /// Registration parameters as JSON; missing fields take defaults.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Crop box `minx,miny,minz,maxx,maxy,maxz`; no cropping by default.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, num_args = 1)]
    pub r#box: Vec<f64>,
    #[arg(long)]
    pub voxel: Option<f64>,
    /// Seed of the virtual surface sampling.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum ScenarioCommand {
    /// Check a scenario file and list every problem.
    Validate { file: PathBuf },
    /// Print a complete scenario file for the built-in phantom.
    Init {
        #[arg(long)]
        seed: Option<u64>,
        /// Study-scale sensor noise instead of none.
        #[arg(long)]
        study_noise: bool,
    },
}

/// Values a `--config` file may supply.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub tick_rate: Option<f64>,
    pub addr: Option<SocketAddr>,
    pub scenario: Option<PathBuf>,
    pub registration: Option<RegistrationParams>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Domain { code: &'static str, message: String },
}

impl CliError {
    fn domain(code: &'static str, message: impl ToString) -> Self {
        CliError::Domain {
            code,
            message: message.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Domain { .. } => 1,
        }
    }
}

fn usage(message: impl ToString) -> CliError {
    CliError::Usage(message.to_string())
}

fn parse_vec3(s: &str) -> Result<Vec3, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("'{p}': {e}")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [x, y, z] => Ok(Vec3::new(x, y, z)),
        _ => Err(format!("expected x,y,z, got {} values", v.len())),
    }
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn require_seed(seed: Option<u64>, command: &str) -> Result<u64, CliError> {
    seed.ok_or_else(|| usage(format!("{command} is randomized; pass --seed (or set it in --config)")))
}

fn registration_code(e: &RegistrationError) -> &'static str {
    match e.root() {
        RegistrationError::EmptyCloud(_) | RegistrationError::EmptyMesh => "EmptyCloud",
        RegistrationError::NoCliques => "NoCliques",
        RegistrationError::BadVoxel => "BadParams",
        RegistrationError::MixedFrames(..) => "MixedFrames",
        RegistrationError::Model(_) => "BadJoints",
        _ => "RegistrationFailed",
    }
}

fn load_scenario(path: Option<&Path>, seed: u64) -> Result<Scenario, CliError> {
    let mut config = match path {
        Some(p) => {
            let text = String::from_utf8(read(p)?).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            serde_json::from_str::<ScenarioConfig>(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?
        }
        None => ScenarioConfig::new(seed, Noise::zero()),
    };
    config.seed = seed;
    let base = path.and_then(Path::parent).unwrap_or(Path::new("."));
    Scenario::from_config(config, base).map_err(|e| match e {
        ScenarioError::Invalid(_) => CliError::domain("InvalidScenario", e),
        e => usage(e),
    })
}

/// A mesh that ignores the joint vector.
struct FixedMesh(TriangleMesh);

impl PosedModel for FixedMesh {
    fn posed_mesh(&self, _joints: &[f64]) -> Result<TriangleMesh, RegistrationError> {
        Ok(self.0.clone())
    }
}

fn emit(
    out: &mut dyn Write,
    json: bool,
    value: &impl Serialize,
    human: impl FnOnce() -> String,
) -> Result<(), CliError> {
    let text = if json {
        serde_json::to_string(value).expect("serializable")
    } else {
        human()
    };
    writeln!(out, "{text}").map_err(|e| usage(e.to_string()))
}

fn fmt_transform(t: &RigidTransform) -> String {
    let q = t.rotation().quaternion();
    let p = t.translation();
    format!(
        "q(w,x,y,z) = ({:.6}, {:.6}, {:.6}, {:.6}), t = ({:.3}, {:.3}, {:.3}) mm",
        q.w, q.i, q.j, q.k, p.x, p.y, p.z
    )
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(p) => {
            serde_json::from_slice::<FileConfig>(&read(p)?).map_err(|e| usage(format!("{}: {e}", p.display())))?
        }
        None => FileConfig::default(),
    };
    if let Some(n) = cli.threads.or(file.threads) {
        // Ignore a second initialisation when run in-process more than once.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let json = cli.json;
    match cli.command {
        Command::Calibrate { input, output } => {
            let text = String::from_utf8(read(&input)?).map_err(|e| usage(e.to_string()))?;
            let pairs = parse_pose_pairs(&text).map_err(|e| usage(format!("{}: {e}", input.display())))?;
            let code = |e: &crate::calibration::CalibrationError| match e {
                crate::calibration::CalibrationError::InsufficientData(_) => "InsufficientData",
                crate::calibration::CalibrationError::DegenerateMotion(_) => "DegenerateMotion",
                _ => "CalibrationFailed",
            };
            let sol = solve_handeye(&pairs).map_err(|e| CliError::domain(code(&e), &e))?;
            if let Some(path) = output {
                let text = serde_json::to_string_pretty(&sol).expect("serializable");
                std::fs::write(&path, text + "\n").map_err(|e| usage(format!("{}: {e}", path.display())))?;
            }
            emit(out, json, &sol, || {
                format!(
                    "X (camera in robot base): {}\nresiduals: {:.3e} rad, {:.3e} mm over {} motions",
                    fmt_transform(&sol.x),
                    sol.rotation_residual,
                    sol.translation_residual,
                    sol.motions_used
                )
            })
        }
        Command::Register(args) => {
            let mut params = match &args.params {
                Some(p) => serde_json::from_slice(&read(p)?).map_err(|e| usage(format!("{}: {e}", p.display())))?,
                None => file.registration.clone().unwrap_or_default(),
            };
            params.seed = require_seed(args.seed.or(file.seed), "register")?;
            if let Some(v) = args.voxel {
                params.voxel = v;
            }
            let frames = args
                .real
                .iter()
                .map(|p| parse_ply(&read(p)?, FrameId::RobotBase).map_err(|e| usage(format!("{}: {e}", p.display()))))
                .collect::<Result<Vec<PointCloud>, _>>()?;
            let bounds = match args.r#box[..] {
                [] => frames
                    .iter()
                    .fold(Aabb::empty(), |b, f| b.union(&f.bounds()))
                    .padded(1.0),
                [a, b, c, d, e, f] => Aabb::new(Point3::new(a, b, c), Point3::new(d, e, f))
                    .ok_or_else(|| usage("--box minimum exceeds maximum"))?,
                _ => return Err(usage("--box takes six numbers")),
            };
            let scenario;
            let fixed;
            let robot;
            let (model, joints): (&dyn PosedModel, Vec<f64>) = match &args.mesh {
                Some(p) => {
                    let (mesh, _) =
                        load_mesh(p, FrameId::VirtualWorld).map_err(|e| usage(format!("{}: {e}", p.display())))?;
                    fixed = FixedMesh(mesh);
                    (&fixed, Vec::new())
                }
                None => {
                    scenario = Scenario::phantom(0, Noise::zero());
                    robot = VirtualRobot {
                        model: &scenario.robot,
                        v_t_r: RigidTransform::identity(),
                    };
                    (&robot, args.joints.clone())
                }
            };
            let mut graph = TransformGraph::new();
            let result = register_robot(&frames, &bounds, model, &joints, &params, &mut graph, 0)
                .map_err(|e| CliError::domain(registration_code(&e), &e))?;
            emit(out, json, &result, || {
                format!(
                    "v_t_r: {}\nrmse {:.3} mm over {} inliers, {} iterations, converged {}",
                    fmt_transform(&result.transform),
                    result.rmse,
                    result.inlier_count,
                    result.iterations,
                    result.converged
                )
            })
        }
        Command::Raycast {
            mesh,
            origin,
            direction,
            brute,
        } => {
            let (mesh, _) = load_mesh(&mesh, FrameId::Spine).map_err(|e| usage(format!("{}: {e}", mesh.display())))?;
            let ray = Ray::new(Point3::from(origin), direction, FrameId::Spine)
                .map_err(|e| CliError::domain("BadParams", e))?;
            let hit = if brute {
                raycast_exhaustive(&ray, &mesh)
            } else {
                raycast_local(&ray, &mesh)
            };
            emit(out, json, &hit, || match (hit.t_star, hit.point, hit.triangle_index) {
                (Some(t), Some(p), Some(i)) => format!("hit triangle {i} at t = {t} point ({}, {}, {})", p.x, p.y, p.z),
                _ => "no hit".into(),
            })
        }
        Command::Scenario(ScenarioCommand::Validate { file: path }) => {
            let text = String::from_utf8(read(&path)?).map_err(|e| usage(e.to_string()))?;
            let config: ScenarioConfig =
                serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            let seed = config.seed;
            let s = load_scenario(Some(&path), seed)?;
            let summary =
                json!({"valid": true, "seed": seed, "targets": s.targets().len(), "triangles": s.spine_mesh.len()});
            emit(out, json, &summary, || {
                format!(
                    "{}: valid, {} targets, {} spine triangles",
                    path.display(),
                    s.targets().len(),
                    s.spine_mesh.len()
                )
            })
        }
        Command::Scenario(ScenarioCommand::Init { seed, study_noise }) => {
            let seed = require_seed(seed.or(file.seed), "scenario init")?;
            let noise = if study_noise { Noise::study() } else { Noise::zero() };
            let text = serde_json::to_string_pretty(&ScenarioConfig::new(seed, noise)).expect("serializable");
            writeln!(out, "{text}").map_err(|e| usage(e.to_string()))
        }
        Command::Replay {
            scenario,
            log,
            seed,
            tick_rate,
        } => {
            let seed = require_seed(seed.or(file.seed), "replay")?;
            let scenario = load_scenario(scenario.as_deref().or(file.scenario.as_deref()), seed)?;
            let text = String::from_utf8(read(&log)?).map_err(|e| usage(e.to_string()))?;
            let entries = parse_log(&text).map_err(|e| usage(format!("{}: {e}", log.display())))?;
            let rate = tick_rate.or(file.tick_rate).unwrap_or(DEFAULT_TICK_RATE);
            let (outcome, record) = replay(Arc::new(scenario), rate, &entries).map_err(|e| match e {
                ReplayError::Unordered { .. } => CliError::domain("UnorderedLog", e),
                e => usage(e),
            })?;
            emit(out, json, &record, || {
                format!(
                    "target {}: error {} mm, {} ms, {} commands ({} trials, {} rejected commands)",
                    record.target_id.as_deref().unwrap_or("-"),
                    record.placement_error_mm.map_or("-".into(), |e| format!("{e:.3}")),
                    record.elapsed_ms,
                    record.command_count,
                    outcome.records.len(),
                    outcome.rejected
                )
            })
        }
        Command::Serve {
            scenario,
            seed,
            addr,
            tick_rate,
            trial_log,
            command_log,
            duration,
        } => {
            let seed = require_seed(seed.or(file.seed), "serve")?;
            let scenario = load_scenario(scenario.as_deref().or(file.scenario.as_deref()), seed)?;
            let defaults = ServerConfig::default();
            let config = ServerConfig {
                addr: addr.or(file.addr).unwrap_or(defaults.addr),
                tick_rate: tick_rate.or(file.tick_rate).unwrap_or(defaults.tick_rate),
                trial_log,
                command_log,
                ..defaults
            };
            let server = serve(Arc::new(scenario), config).map_err(|e| CliError::domain("Bind", e))?;
            if !json {
                writeln!(out, "listening on {}", server.local_addr()).map_err(|e| usage(e.to_string()))?;
                out.flush().ok();
            }
            match duration {
                Some(secs) => std::thread::sleep(Duration::from_secs_f64(secs.max(0.0))),
                None => loop {
                    std::thread::sleep(Duration::from_secs(3600));
                },
            }
            let stats = server.stop();
            emit(out, json, &stats, || {
                format!(
                    "{} ticks, max jitter {:.2} ms of {:.2} ms, {} overruns, {} clients, {} dropped messages",
                    stats.ticks,
                    stats.max_jitter_ms,
                    stats.period_ms,
                    stats.overruns,
                    stats.clients_seen,
                    stats.dropped_messages
                )
            })
        }
        Command::Accept {
            seed,
            only,
            liveness_secs,
        } => {
            let cfg = AcceptConfig {
                seed: require_seed(seed.or(file.seed), "accept")?,
                threads: cli.threads.or(file.threads).unwrap_or(4),
                liveness: Duration::from_secs_f64(liveness_secs.max(0.0)),
                ..AcceptConfig::default()
            };
            if let Some(bad) = only.iter().find(|&&i| !(1..=9).contains(&i)) {
                return Err(usage(format!("no acceptance check {bad}")));
            }
            let mut failed = Vec::new();
            for id in (1..=9).filter(|i| only.is_empty() || only.contains(i)) {
                let v = acceptance::run(id, &cfg);
                if !v.passed {
                    failed.push(id);
                }
                emit(out, json, &v, || v.to_string())?;
            }
            if failed.is_empty() {
                Ok(())
            } else {
                Err(CliError::domain(
                    "AcceptanceFailed",
                    format!("checks {failed:?} failed"),
                ))
            }
        }
    }
}

/// Parses `args`, runs, reports errors and returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match run(cli, &mut lock) {
        Ok(()) => 0,
        Err(e) => {
            match &e {
                CliError::Usage(m) => eprintln!("error: {m}"),
                CliError::Domain { code, message } => {
                    eprintln!("{}", json!({"error": {"code": code, "message": message}}));
                }
            }
            e.exit_code()
        }
    }
}
