//! Rebuild per-code aggregates from the append-only log and compare with the live view.

use std::error::Error;

use explicit_trust::history::replay;
use explicit_trust::integrity::install;
use explicit_trust::model::PrincipalKind;
use explicit_trust::{AlgorithmParams, CodeUnit, Engine, KeyPair, Principal, Store};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let dir = tempfile::tempdir()?;
    let mut store = Store::open(dir.path())?;
    store.set_sync(false);
    let key = KeyPair::from_label("acme");
    store.register_principal(Principal::new("acme", key.public_key().to_vec(), 0.7, PrincipalKind::Vendor)?)?;
    let bodies: [(&str, &[u8]); 3] = [
        ("good", b"COMPUTE 2\nEXIT success\n"),
        ("careful", b"RAISE_HANDLED\nEXIT success\n"),
        ("sloppy", b"WRITE system registry\nEXIT success\n"),
    ];
    for (id, body) in bodies {
        install(&mut store, CodeUnit::signed(id, "acme", body, 1.0, &key)?, false)?;
    }

    let mut engine = Engine::new(store, AlgorithmParams::default());
    for i in 0..30 {
        engine.run(bodies[i % 3].0)?;
    }

    let log = engine.store().history().path().to_path_buf();
    let rebuilt = replay(&log)?;
    let live = engine.store().history().cached_aggregates();
    for (id, agg) in &rebuilt {
        println!("{id:<8} total={:>2} successes={:>2} failures={:>2}", agg.total, agg.successes, agg.failures);
    }
    assert_eq!(rebuilt, live);
    println!("replay matches live aggregates");
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
