//! Bohmian, quantum and geometric dwell times over the evanescent sweep.
//!
//! cargo run --release --example dwell_table

use evanescent::scenario::{dwell_rows, dwell_violations};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let rows = dwell_rows()?;
    println!(
        "{:>8} {:>8} {:>10} {:>10} {:>8} {:>12} {:>12} {:>10}",
        "delta", "E", "k_in", "kappa", "tau_bohm", "tau_qm", "tau_lambda", "k/kappa"
    );
    for r in &rows {
        println!(
            "{:>8} {:>8.4} {:>10.6} {:>10.6} {:>8} {:>12.6} {:>12.6} {:>10.6}{}",
            r.delta,
            r.energy,
            r.k_in,
            r.kappa,
            r.tau_bohm,
            r.tau_qm,
            r.tau_lambda,
            r.k_over_kappa,
            if r.matched { "  (k_in = kappa)" } else { "" }
        );
    }
    for v in dwell_violations(&rows) {
        println!("violation: {v}");
    }
    Ok(())
}
