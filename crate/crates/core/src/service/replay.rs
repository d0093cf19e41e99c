use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::registration::RegistrationParams;
use crate::sim::{aim_pose, planned_depth, target_in_base, Operator, Scenario};

use super::session::{Command, Phase, Reply, Session, StateSnapshot, TrialRecord};

/// A command and the tick at which the loop applied it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub tick: u64,
    #[serde(flatten)]
    pub command: Command,
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("entry {index}: tick {tick} comes after tick {previous}")]
    Unordered { index: usize, tick: u64, previous: u64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Parses a JSON-lines command log; blank lines are skipped.
pub fn parse_log(text: &str) -> Result<Vec<LogEntry>, ReplayError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| ReplayError::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn write_log(entries: &[LogEntry], mut out: impl Write) -> std::io::Result<()> {
    for e in entries {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Appends one record as a JSON line, creating the file if needed.
pub fn record_trial(path: &Path, record: &TrialRecord) -> std::io::Result<()> {
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut line = serde_json::to_vec(record)?;
    line.push(b'\n');
    f.write_all(&line)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayOutcome {
    /// One per `end_trial` in the log.
    pub records: Vec<TrialRecord>,
    /// Commands the session refused.
    pub rejected: usize,
    /// State after the tick of the last entry.
    pub final_state: StateSnapshot,
    /// Every state message the loop would have broadcast.
    pub states: Vec<StateSnapshot>,
}

/// Re-runs a command log tick by tick, exactly as the loop applied it.
pub fn replay(
    scenario: Arc<Scenario>,
    tick_rate: f64,
    entries: &[LogEntry],
) -> Result<(ReplayOutcome, TrialRecord), ReplayError> {
    for (i, w) in entries.windows(2).enumerate() {
        if w[1].tick < w[0].tick {
            return Err(ReplayError::Unordered {
                index: i + 1,
                tick: w[1].tick,
                previous: w[0].tick,
            });
        }
    }
    let mut session = Session::new(scenario, tick_rate);
    let mut records = Vec::new();
    let mut rejected = 0;
    let mut states = Vec::new();
    let mut next = 0;
    let last_tick = entries.last().map_or(0, |e| e.tick);
    while session.tick() <= last_tick {
        while let Some(e) = entries.get(next).filter(|e| e.tick == session.tick()) {
            match session.apply(&e.command) {
                Ok(Reply::TrialRecorded { record }) => records.push(record),
                Ok(_) => {}
                Err(_) => rejected += 1,
            }
            next += 1;
        }
        session.step();
        states.push(session.snapshot());
    }
    let record = records.last().cloned().unwrap_or_else(|| session.current_record());
    let outcome = ReplayOutcome {
        records,
        rejected,
        final_state: session.snapshot(),
        states,
    };
    Ok((outcome, record))
}

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("{0}")]
    Rejected(String),
    #[error("{0}")]
    Job(String),
    #[error("aim did not settle within {0} ticks")]
    NoConvergence(u64),
}

/// Longest aiming phase of a scripted trial, in ticks.
pub const SCRIPT_TICK_LIMIT: u64 = 5000;

/// What a scripted operator does in one session.
#[derive(Clone, Debug, PartialEq)]
pub struct Script {
    pub targets: Vec<String>,
    pub operator: Operator,
    /// Register the virtual robot after calibrating.
    pub register: Option<RegistrationParams>,
}

/// A scripted operator: calibrate (and optionally register), then for each
/// target aim with the operator using only what the session knows, insert
/// to the planned depth and end the trial. Returns the command log and one
/// record per target.
pub fn scripted_session(
    scenario: Arc<Scenario>,
    tick_rate: f64,
    script: &Script,
) -> Result<(Vec<LogEntry>, Vec<TrialRecord>), ScriptError> {
    let mut session = Session::new(Arc::clone(&scenario), tick_rate);
    let mut log = Vec::new();
    let mut send = |session: &mut Session, command: Command| -> Result<Reply, ScriptError> {
        log.push(LogEntry {
            tick: session.tick(),
            command: command.clone(),
        });
        session
            .apply(&command)
            .map_err(|e| ScriptError::Rejected(e.to_string()))
    };
    let mut run_job = |session: &mut Session, command: Command| -> Result<(), ScriptError> {
        send(session, command)?;
        while matches!(session.phase(), Phase::Calibrating | Phase::Registering) {
            session.step();
        }
        match session.notice() {
            Some(n) => Err(ScriptError::Job(n.to_string())),
            None => Ok(()),
        }
    };

    run_job(
        &mut session,
        Command::StartCalibration {
            n_pairs: scenario.config.calibration_pairs,
        },
    )?;
    if let Some(params) = &script.register {
        run_job(&mut session, Command::StartRegistration { params: params.clone() })?;
    }

    let mut records = Vec::new();
    for id in &script.targets {
        send(&mut session, Command::SetTarget { id: id.clone() })?;
        send(&mut session, Command::StartTrial)?;
        let target = scenario.target(id).expect("accepted by set_target");
        let target_r = target_in_base(target, session.graph()).map_err(|e| ScriptError::Job(e.to_string()))?;
        let guide = *session.guide();
        let goal = aim_pose(
            &guide,
            &target_r,
            scenario.config.standoff,
            &session.robot().end_effector,
        );
        let mut ticks = 0;
        loop {
            let jogs = script
                .operator
                .jogs(&session.robot().end_effector, &goal, session.jog_limits());
            if jogs.is_empty() {
                break;
            }
            for j in jogs {
                send(
                    &mut session,
                    Command::Jog {
                        axis: j.axis,
                        delta: j.delta,
                    },
                )?;
            }
            session.step();
            ticks += 1;
            if ticks > SCRIPT_TICK_LIMIT {
                return Err(ScriptError::NoConvergence(SCRIPT_TICK_LIMIT));
            }
        }
        let depth = script
            .operator
            .depth(planned_depth(&guide, &session.robot().end_effector, &target_r));
        send(&mut session, Command::Insert { depth })?;
        match send(&mut session, Command::EndTrial)? {
            Reply::TrialRecorded { record } => records.push(record),
            other => unreachable!("end_trial replied {other:?}"),
        }
        session.step();
    }
    Ok((log, records))
}

/// One calibrated trial on one target.
pub fn scripted_trial(
    scenario: Arc<Scenario>,
    tick_rate: f64,
    target_id: &str,
    operator: Operator,
) -> Result<(Vec<LogEntry>, TrialRecord), ScriptError> {
    let script = Script {
        targets: vec![target_id.into()],
        operator,
        register: None,
    };
    let (log, mut records) = scripted_session(scenario, tick_rate, &script)?;
    Ok((log, records.pop().expect("one target, one record")))
}
