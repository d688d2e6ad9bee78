//! Finite-difference verification of the reverse-mode gradients, for each
//! layer kind and for the whole model on one seed.
//!
//! cargo run --release --example gradient_check

use diffjscc::numerics::gradcheck::layer_report;
use diffjscc::numerics::LayerKind;
use diffjscc::selfcheck::gradient_reports;

fn main() -> diffjscc::Result<()> {
    for kind in LayerKind::ALL {
        let r = layer_report(kind, 0)?;
        println!("{:<16} {:>4} entries  max rel err {:.1e}", r.name, r.checked, r.max_rel_err);
    }
    let reports = gradient_reports(1)?;
    let worst = reports.iter().max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err)).expect("suite is non-empty");
    println!("{} checks on seed 1, all passed: {}; worst {} at {:.1e}", reports.len(), reports.iter().all(|r| r.passed()), worst.name, worst.max_rel_err);
    Ok(())
}
