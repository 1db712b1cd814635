//! Print the resource access table and check it is monotone in trust.

use std::error::Error;

use explicit_trust::harness::{AccessMatrix, AccessOp};
use explicit_trust::model::ResourceClass;
use explicit_trust::TrustLevel;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let matrix = AccessMatrix::default();
    matrix.validate()?;

    print!("{:<13}", "level");
    for class in ResourceClass::ALL {
        print!("{:>11}", class.as_str());
    }
    println!();
    for level in TrustLevel::ALL.iter().rev() {
        print!("{:<13}", level.as_str());
        for class in ResourceClass::ALL {
            let cell: String = AccessOp::ALL
                .iter()
                .map(|op| match matrix.check(*level, class, *op) {
                    explicit_trust::harness::Access::Allow => &op.as_str()[..1],
                    explicit_trust::harness::Access::Deny => "-",
                })
                .collect();
            print!("{cell:>11}");
        }
        println!();
    }

    let mut broken = AccessMatrix::default();
    broken.grant(TrustLevel::Untrustable, ResourceClass::System, AccessOp::Write);
    println!("granting sandboxed code system writes: {}", broken.validate().unwrap_err());
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
