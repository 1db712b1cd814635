//! Run well-behaved signed code until it earns Operational trust.

use std::error::Error;

use explicit_trust::integrity::install;
use explicit_trust::model::PrincipalKind;
use explicit_trust::{AlgorithmParams, CodeUnit, Engine, KeyPair, Principal, Store, TrustLevel};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let dir = tempfile::tempdir()?;
    let mut store = Store::open(dir.path())?;
    store.set_sync(false);

    let key = KeyPair::from_label("acme");
    store.register_principal(Principal::new("acme", key.public_key().to_vec(), 0.5, PrincipalKind::Vendor)?)?;
    let code = CodeUnit::signed("indexer", "acme", b"READ user docs\nCOMPUTE 10\nWRITE user index\nEXIT success\n", 1.0, &key)?;
    install(&mut store, code, false)?;

    let mut engine = Engine::new(store, AlgorithmParams::default());
    let mut level = TrustLevel::Verifiable;
    for run in 1..=60 {
        let report = engine.run("indexer")?;
        let now = report.record_after.effective_level;
        if now != level {
            println!("run {run:>2}: {level} -> {now} (score {:.4})", report.score_after);
            level = now;
        }
    }
    assert_eq!(level, TrustLevel::Operational);
    println!("verdict now: {:?}", engine.evaluate("indexer")?.decision);
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
