//! A scripted session: calibrate, register, then aim at each facet joint with
//! a gamepad-like operator. The command log replays to identical records.

use std::sync::Arc;

use spinenav::acceptance::STUDY_OPERATOR;
use spinenav::registration::RegistrationParams;
use spinenav::service::{record_trial, replay, scripted_session, Script, DEFAULT_TICK_RATE};
use spinenav::sim::{Noise, Scenario, TargetKind};

fn main() {
    let scenario = Arc::new(Scenario::phantom(2, Noise::study()));
    let script = Script {
        targets: scenario
            .targets()
            .iter()
            .filter(|t| t.kind == TargetKind::FacetJoint)
            .map(|t| t.id.clone())
            .collect(),
        operator: STUDY_OPERATOR,
        register: Some(RegistrationParams::default()),
    };
    let (log, records) = scripted_session(Arc::clone(&scenario), DEFAULT_TICK_RATE, &script).unwrap();
    let out = std::env::temp_dir().join("spinenav_trials.jsonl");
    for r in &records {
        println!(
            "{}: {:.2} mm in {} ms, {} commands",
            r.target_id.as_deref().unwrap_or("-"),
            r.placement_error_mm.unwrap_or(f64::NAN),
            r.elapsed_ms,
            r.command_count
        );
        record_trial(&out, r).unwrap();
    }
    let (outcome, _) = replay(scenario, DEFAULT_TICK_RATE, &log).unwrap();
    assert_eq!(outcome.records, records);
    println!(
        "{} commands replayed to identical records; appended to {}",
        log.len(),
        out.display()
    );
}
