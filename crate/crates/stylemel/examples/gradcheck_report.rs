//! Run the finite-difference gradient checks over every primitive and layer
//! and print the report table.
//!
//!     cargo run --release --example gradcheck_report

use std::time::Instant;

use stylemel::verify;

fn main() {
    let start = Instant::now();
    let checks = verify::gradcheck_suite();
    for c in &checks {
        println!("{}", c.report_line());
    }
    let passed = checks.iter().filter(|c| c.pass).count();
    println!(
        "\n{passed}/{} gradient checks passed in {:.2}s",
        checks.len(),
        start.elapsed().as_secs_f64()
    );
    std::process::exit(if passed == checks.len() { 0 } else { 1 });
}
