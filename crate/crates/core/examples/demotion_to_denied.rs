//! Crashing code loses trust step by step until it is refused outright.

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
    install(&mut store, CodeUnit::signed("flaky", "acme", b"COMPUTE 1\nRAISE_UNHANDLED\n", 1.0, &key)?, false)?;

    let mut engine = Engine::new(store, AlgorithmParams::default());
    for run in 1..=20 {
        let r = engine.run("flaky")?;
        println!(
            "run {run:>2}: {:?} score={:.4} level={}",
            r.outcome.expect("executed"),
            r.score_after,
            r.record_after.effective_level
        );
    }
    assert_eq!(engine.store().trust_record("flaky").map(|r| r.effective_level), Some(TrustLevel::Denied));

    let before = engine.store().fingerprint()?;
    let r = engine.run("flaky")?;
    println!("next run: {}", serde_json::to_string(&r.verdict)?);
    assert!(r.verdict.is_deny());
    assert_eq!(before, engine.store().fingerprint()?);
    println!("store untouched by the denied run");
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
