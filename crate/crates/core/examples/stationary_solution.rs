//! Closed-form stationary field next to the finite-difference oracle.
//!
//! cargo run --release --example stationary_solution -- [delta] [J0]

use evanescent::geometry::resolved_grid;
use evanescent::stationary::{flux_balance, max_relative_deviation, solve_analytic, solve_bvp_refined};
use evanescent::{Params, UnitSystem};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<f64> = std::env::args().skip(1).map(|a| a.parse()).collect::<Result<_, _>>()?;
    let delta = args.first().copied().unwrap_or(-2.0);
    let j0 = args.get(1).copied().unwrap_or(0.01);

    let params = Params::with_detuning(UnitSystem::NATURAL, j0, delta, 1.0)?;
    let grid = resolved_grid(&params)?;
    let field = solve_analytic(&params, &grid)?;
    let oracle = solve_bvp_refined(&params, &grid)?;
    let flux = flux_balance(&params)?;

    println!("regime {} (delta / hbar J0 = {:.3})", params.classify(), params.delta_over_hj0());
    println!("grid [{:.2}, {:.2}], h = {:.2e}, {} nodes", grid.x_min(), grid.x_max(), grid.spacing(), grid.len());
    println!("reflection r = {:?}", field.reflection);
    println!("flux defect {:.2e}", flux.relative_defect());
    println!("oracle deviation {:.2e}", max_relative_deviation(&field, &oracle));

    let o = grid.origin();
    let stride = (grid.len() - o) / 8;
    println!("{:>10} {:>14} {:>14}", "x", "|psi_m|^2", "|psi_a|^2");
    for i in (o..grid.len()).step_by(stride.max(1)) {
        println!("{:>10.4} {:>14.6e} {:>14.6e}", grid.x(i), field.psi_m[i].norm_sqr(), field.psi_a[i].norm_sqr());
    }
    Ok(())
}
