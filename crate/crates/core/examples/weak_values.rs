//! Weak momentum inside the barrier, a stationary Bohmian trajectory and the
//! ensemble average of weak values over a Gaussian packet.
//!
//! cargo run --release --example weak_values -- [samples] [seed]

use evanescent::bohm::{
    ensemble_weak_average, integrate_trajectory_stationary, operational_speeds, polar_decompose, weak_momentum,
    Axis, GuidingField, Observable,
};
use evanescent::cli::gaussian_guide;
use evanescent::geometry::resolved_grid;
use evanescent::stationary::solve_analytic;
use evanescent::{Params, UnitSystem};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let samples: usize = args.next().map(|a| a.parse()).transpose()?.unwrap_or(10_000);
    let seed: u64 = args.next().map(|a| a.parse()).transpose()?.unwrap_or(1);
    let units = UnitSystem::NATURAL;

    let p = Params::with_detuning(units, 0.01, -2.0, 1.0)?;
    let field = solve_analytic(&p, &resolved_grid(&p)?)?;
    let o = field.grid.origin();
    let weak = weak_momentum(&polar_decompose(Axis::right_of_step(&field.grid), &field.psi_m[o..], p.hbar())?);
    let speeds = operational_speeds(&weak, units);
    println!("x > 0: max |v_S| = {:.2e}, decay speed at x = 1: {:.6}", speeds.max_abs_v_s(), {
        let i = (1.0 / field.grid.spacing()).round() as usize;
        speeds.decay_speed[i]
    });

    let guide = GuidingField::from_field(&field);
    let path = integrate_trajectory_stationary(&guide, -1.0, 20.0, 0.01)?;
    let spread = path.positions.iter().fold(0.0f64, |m, x| m.max((x + 1.0).abs()));
    println!("trajectory from x = -1: stop {:?}, largest displacement {:.2e}", path.stop, spread);

    let packet = gaussian_guide(1.0, 1.5, units, 4001);
    let avg = ensemble_weak_average(&packet, Observable::Momentum, samples, seed)?;
    println!(
        "packet: <p_w> = {:.5} {:+.5}i, <p> = {:.5} {:+.5}i, {:.2} standard errors apart",
        avg.mean.re,
        avg.mean.im,
        avg.quadrature.re,
        avg.quadrature.im,
        avg.deviation_in_std_errors()
    );
    Ok(())
}
