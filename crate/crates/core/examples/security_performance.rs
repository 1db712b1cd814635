//! Evaluate the security/performance model and write a small sweep.

use std::error::Error;

use explicit_trust::analysis::{baseline_metrics, fmt_sig, secured_metrics, sweep, write_csv, AnalysisInput};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let (perf, sec) = baseline_metrics(100, 2.0, 1.0)?;
    println!("baseline   n=100 k=2: perf={perf} sec={sec}");

    for l in [10.0, 1.0] {
        let r = secured_metrics(&AnalysisInput::new(100, 2.0, 1.0, [l; 4])?)?;
        println!(
            "secured    l={l:<4}    perf={} sec_raw={} overhead/property={}",
            fmt_sig(r.perf_secured), fmt_sig(r.sec_secured), fmt_sig(r.overhead_ops[0])
        );
    }

    let rows = sweep("10:100:30".parse()?, 2.0, 1.0, [10.0; 4])?;
    let mut out = std::io::stdout().lock();
    write_csv(&rows, &mut out)?;
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
