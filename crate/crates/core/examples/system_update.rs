//! Install vendor code as part of the system and push updates to it.

use std::error::Error;

use explicit_trust::integrity::{authorize_update, install};
use explicit_trust::model::PrincipalKind;
use explicit_trust::{sign_manifest, CodeUnit, KeyPair, Manifest, Principal, Store};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let dir = tempfile::tempdir()?;
    let mut store = Store::open(dir.path())?;
    let vendor = KeyPair::from_label("acme");
    let intruder = KeyPair::from_label("intruder");
    store.register_principal(Principal::new("acme", vendor.public_key().to_vec(), 0.9, PrincipalKind::Vendor)?)?;

    let v1: &[u8] = b"READ system config\nEXIT success\n";
    let record = install(&mut store, CodeUnit::signed("driver", "acme", v1, 3.0, &vendor)?, true)?;
    println!("installed driver at {} (owner: {})", record.effective_level, store.installed("driver").unwrap().owner_id);

    let v2: &[u8] = b"READ system config\nWRITE system config\nEXIT success\n";
    let manifest = Manifest::describe("driver", "acme", v2, 3.0)?;

    let forged = sign_manifest(&manifest, &intruder)?;
    let before = store.fingerprint()?;
    let accepted = authorize_update(&mut store, "driver", v2, &manifest, &forged)?;
    println!("update signed by intruder accepted: {accepted}");
    assert!(!accepted && store.fingerprint()? == before);

    let genuine = sign_manifest(&manifest, &vendor)?;
    let accepted = authorize_update(&mut store, "driver", v2, &manifest, &genuine)?;
    println!("update signed by acme accepted:     {accepted}");
    assert!(accepted);
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
