//! Every example in `examples/` runs to completion.

#[allow(dead_code)]
#[path = "../examples/access_matrix.rs"]
mod access_matrix;

#[allow(dead_code)]
#[path = "../examples/demotion_to_denied.rs"]
mod demotion_to_denied;

#[allow(dead_code)]
#[path = "../examples/history_replay.rs"]
mod history_replay;

#[allow(dead_code)]
#[path = "../examples/security_performance.rs"]
mod security_performance;

#[allow(dead_code)]
#[path = "../examples/sign_and_verify.rs"]
mod sign_and_verify;

#[allow(dead_code)]
#[path = "../examples/state_audit.rs"]
mod state_audit;

#[allow(dead_code)]
#[path = "../examples/system_update.rs"]
mod system_update;

#[allow(dead_code)]
#[path = "../examples/threat_scenarios.rs"]
mod threat_scenarios;

#[allow(dead_code)]
#[path = "../examples/trust_evolution.rs"]
mod trust_evolution;

#[test]
fn access_matrix_runs() {
    access_matrix::run_example().unwrap();
}

#[test]
fn demotion_to_denied_runs() {
    demotion_to_denied::run_example().unwrap();
}

#[test]
fn history_replay_runs() {
    history_replay::run_example().unwrap();
}

#[test]
fn security_performance_runs() {
    security_performance::run_example().unwrap();
}

#[test]
fn sign_and_verify_runs() {
    sign_and_verify::run_example().unwrap();
}

#[test]
fn state_audit_runs() {
    state_audit::run_example().unwrap();
}

#[test]
fn system_update_runs() {
    system_update::run_example().unwrap();
}

#[test]
fn threat_scenarios_runs() {
    threat_scenarios::run_example().unwrap();
}

#[test]
fn trust_evolution_runs() {
    trust_evolution::run_example().unwrap();
}
