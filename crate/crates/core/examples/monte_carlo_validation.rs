//! Run the validation suites with the published seed.

use splitting_tree::montecarlo::{run_suite, RunOptions, SUITES};

fn main() -> splitting_tree::Result<()> {
    let run = RunOptions::new(10_000, 42);
    for name in SUITES {
        let report = run_suite(name, &run)?;
        println!("suite {name}: {}", if report.all_pass() { "pass" } else { "FAIL" });
        for row in &report.rows {
            println!(
                "  {:<32} theory {:<12.6} estimate {:<12.6} z {:>7.3} {}",
                row.check, row.theory, row.estimate, row.z, row.pass
            );
        }
    }
    Ok(())
}
