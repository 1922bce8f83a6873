//! Every acceptance criterion, one pass/fail line each. Thresholds are the
//! constants in `dop_cli::suites`.

use std::process::ExitCode;

use dop_cli::suites::{run_suite, Suite};

fn main() -> ExitCode {
    println!("\nrunning acceptance criteria");
    let checks = run_suite(Suite::All, |c| println!("{c}"));
    let failed: Vec<u8> = checks.iter().filter(|c| !c.pass).map(|c| c.id).collect();
    println!("acceptance: {}/{} criteria passed", checks.len() - failed.len(), checks.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed criteria: {failed:?}");
        ExitCode::FAILURE
    }
}
