//! Describe a workload, sign its manifest and check what verification catches.

use std::error::Error;

use explicit_trust::integrity::{check_code, IntegrityStatus};
use explicit_trust::{sign_manifest, verify_manifest, KeyPair, Manifest};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let body = b"COMPUTE 4\nREAD user settings\nEXIT success\n";
    let acme = KeyPair::from_label("acme");
    let mallory = KeyPair::from_label("mallory");

    let manifest = Manifest::describe("settings-reader", "acme", body, 2.0)?;
    print!("{manifest}");
    let sig = sign_manifest(&manifest, &acme)?;
    println!("signature: {}", hex::encode(&sig));

    let ok = verify_manifest(&manifest, Some(&sig), &acme.public_key(), Some(body));
    println!("owner key, original body: {ok}");
    assert!(ok);

    let wrong_key = verify_manifest(&manifest, Some(&sig), &mallory.public_key(), Some(body));
    println!("someone else's key:       {wrong_key}");
    assert!(!wrong_key);

    let mut tampered = body.to_vec();
    tampered[0] ^= 1;
    let bad_body = verify_manifest(&manifest, Some(&sig), &acme.public_key(), Some(&tampered));
    println!("one flipped body byte:    {bad_body}");
    assert!(!bad_body);

    let code = explicit_trust::CodeUnit::from_parts(&manifest, tampered, Some(sig));
    let status = check_code(&code, &acme.public_key());
    println!("installed-code check:     {status:?}");
    assert!(matches!(status, IntegrityStatus::Failed(_)));
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
