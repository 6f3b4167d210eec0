// Least-squares refinement of a coarse channel estimate.

use std::error::Error;

use risloc::esprit::coarse_estimate;
use risloc::geometry::forward_map;
use risloc::harness::{channel_errors, nominal_snr_db, noise_scale_for_snr, simulate_trial, TrialSetup};
use risloc::refine::{ls_refine, RefineOptions};
use risloc::scenario::ScenarioConfig;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let mut setup = TrialSetup::new(&ScenarioConfig::nominal(), 1)?;
    let nominal = nominal_snr_db(&setup.config, &setup.design, &setup.state)?;
    setup.config = setup.config.with_noise_scale(noise_scale_for_snr(nominal, 20.0));
    let truth = forward_map(&setup.state, &setup.config.bs)?;

    let obs = simulate_trial(&setup, 9)?;
    let coarse = coarse_estimate(&obs)?;
    let refined = ls_refine(&coarse.eta_hat, &obs, &RefineOptions::default())?;

    println!("iterations     {} ({:?})", refined.iterations, refined.stop);
    println!("cost           {:.4e} -> {:.4e}", refined.initial_cost, refined.final_cost);
    let names = ["theta_l", "theta_r", "tau_l_m", "tau_r_m", "vartheta"];
    let (ec, er) = (channel_errors(&coarse.eta_hat, &truth), channel_errors(&refined.eta, &truth));
    for (i, n) in names.iter().enumerate() {
        println!("{n:<10} coarse {:>10.3e}   refined {:>10.3e}", ec[i], er[i]);
    }
    println!("|alpha_L|      {:.3e}", refined.alpha_l.norm());
    println!("|alpha_R|      {:.3e}", refined.alpha_r.norm());
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
