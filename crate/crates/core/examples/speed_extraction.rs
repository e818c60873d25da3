//! Population-transfer speed and decay constants across the evanescent
//! sweep, with the identity `v = hbar kappa / m`.
//!
//! cargo run --release --example speed_extraction

use evanescent::geometry::{geometry_report, identity_v_kappa, resolved_grid};
use evanescent::stationary::solve_analytic;
use evanescent::{Params, UnitSystem};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let units = UnitSystem::NATURAL;
    println!(
        "{:>8} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}",
        "delta", "d/hJ0", "kappa", "v_fit", "v_theory", "v_weak", "identity"
    );
    for delta in [-0.0125, -0.02, -0.05, -0.1, -0.5, -1.0, -2.0, -5.0] {
        let p = Params::with_detuning(units, 0.01, delta, 1.0)?;
        let field = solve_analytic(&p, &resolved_grid(&p)?)?;
        let g = geometry_report(&field)?;
        println!(
            "{:>8} {:>10.1} {:>10.6} {:>10.6} {:>10.6} {:>10.6} {:>10.2e}",
            delta,
            p.delta_over_hj0(),
            g.kappa,
            g.v_fit,
            g.v_theory,
            g.v_weak,
            identity_v_kappa(&g, units)
        );
    }
    Ok(())
}
