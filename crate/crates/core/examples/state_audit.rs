//! Track a process tree and audit it for work that never finished.

use std::error::Error;

use explicit_trust::registry::{ExitStatus, Registry};
use explicit_trust::ExecutionOutcome;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let mut clean = Registry::new();
    let root = clean.begin_process("shell", None)?;
    let child = clean.begin_process("ls", Some(root))?;
    clean.complete_process(child, ExitStatus::Success)?;
    clean.complete_process(root, ExitStatus::Success)?;
    println!("clean tree: {:?}", clean.audit(root)?);

    let mut messy = Registry::new();
    let root = messy.begin_process("server", None)?;
    let worker = messy.begin_process("worker", Some(root))?;
    messy.begin_process("helper", Some(worker))?;
    messy.abort_process(root, ExecutionOutcome::UnhandledError)?;
    for event in messy.events() {
        println!("{event}");
    }
    let reasons = messy.audit(root)?;
    println!("messy tree: {reasons:?}");
    assert!(!reasons.is_empty());
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
