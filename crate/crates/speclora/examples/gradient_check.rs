//! Verify the adapter's analytic gradients against central finite
//! differences, across both variants and both directions.
//!
//! ```bash
//! cargo run --example gradient_check
//! ```

use speclora::gradcheck;

fn main() -> speclora::Result<()> {
    let report = gradcheck::run(2024, 40)?;
    println!(
        "checked {} gradient components over {} randomized adapters",
        report.components_checked, report.cases
    );
    println!("max relative error vs central differences: {:.3e}", report.max_rel_err);
    println!("tolerance: {:.0e}", gradcheck::GRAD_TOL);
    println!("verdict: {}", if report.passed() { "PASS" } else { "FAIL" });

    // the checker itself is checked: a corrupted gradient must be caught
    let faulted = gradcheck::run_faulted(2024, 4)?;
    println!(
        "\nnegative control (one corrupted component per case): max rel err {:.3e} -> {}",
        faulted.max_rel_err,
        if faulted.passed() { "MISSED" } else { "caught" }
    );
    Ok(())
}
