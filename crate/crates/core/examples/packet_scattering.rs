//! Gaussian packet on the deep-evanescent step: transient penetration,
//! equivariance and the recorded profile next to the stationary one.
//!
//! cargo run --release --example packet_scattering -- [ratio] [particles] [spacing] [dt]

use std::time::Instant;

use evanescent::timedep::{run_transient, TransientSetup};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<f64> = std::env::args().skip(1).map(|a| a.parse()).collect::<Result<_, _>>()?;
    let ratio = args.first().copied().unwrap_or(0.1);
    let particles = args.get(1).copied().unwrap_or(2000.0) as usize;
    let spacing = args.get(2).copied().unwrap_or(0.005);
    let dt = args.get(3).copied().unwrap_or(0.05);

    let setup = TransientSetup::deep_evanescent(ratio, spacing, dt)?;
    println!(
        "packet: x0 = {:.2}, sigma_x = {:.3}, k0 = {}, grid [{:.1}, {:.2}] with {} nodes, {} steps",
        setup.spec.x0,
        setup.spec.sigma_x,
        setup.spec.k0,
        setup.grid.x_min(),
        setup.grid.x_max(),
        setup.grid.len(),
        setup.plan.steps()
    );
    let start = Instant::now();
    let run = run_transient(&setup, particles, 7, 16)?;
    let s = &run.summary;
    println!("elapsed {:.1} s", start.elapsed().as_secs_f64());
    println!("norm drift            {:.3e}", s.norm_drift);
    println!("continuity residual   {:.3e}", s.max_continuity_residual);
    println!("profile shape dev     {:.4}", s.profile_shape_deviation);
    println!("v fit (profile)       {:?}", s.v_fit_profile);
    println!("v fit (stationary)    {:.6}", s.v_fit_stationary);
    println!("transmitted norm      {:.3e}", s.transmitted_norm);
    if particles > 0 {
        println!("penetration fraction  {:.4}", s.penetration_fraction);
        println!("final x < 0 fraction  {:.4}", s.final_negative_fraction);
        println!("particles beyond 5/k  {:.3e}", s.particle_transmitted_fraction);
        println!("max excursion         {:.4}", s.max_excursion);
        println!("crossings             {}", s.crossings);
        println!("stopped               {}", s.stopped);
        println!("KS distance           {:.4}", s.ks_distance);
    }
    for w in &s.warnings {
        println!("warning: {w}");
    }
    Ok(())
}
