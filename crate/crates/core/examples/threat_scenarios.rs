//! Replay every built-in attack scenario and report each expectation.

use std::error::Error;

use explicit_trust::scenarios::{run_scenario, ScenarioName};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let mut all = true;
    for name in ScenarioName::ALL {
        let report = run_scenario(name.as_str())?;
        print!("{}", report.summary());
        all &= report.passed();
    }
    if !all {
        return Err("a scenario expectation failed".into());
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
