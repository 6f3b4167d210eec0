// Tensor-ESPRIT channel parameter estimation at several noise levels.

use std::error::Error;

use risloc::esprit::{coarse_estimate_with, CoarseOptions, TensorLayout};
use risloc::harness::{channel_errors, nominal_snr_db, noise_scale_for_snr, simulate_trial, TrialSetup};
use risloc::scenario::ScenarioConfig;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let base = TrialSetup::new(&ScenarioConfig::nominal(), 1)?;
    let nominal = nominal_snr_db(&base.config, &base.design, &base.state)?;
    println!("{:>8} {:>8} {:>10} {:>10} {:>10} {:>10} {:>10}", "snr_db", "layout", "theta_l", "theta_r", "tau_l_m", "tau_r_m", "vartheta");
    for snr in [f64::INFINITY, 30.0, 10.0] {
        for layout in [TensorLayout::Stacked, TensorLayout::Summed] {
            let mut setup = base.clone();
            let scale = if snr.is_finite() { noise_scale_for_snr(nominal, snr) } else { 0.0 };
            setup.config = base.config.with_noise_scale(scale);
            let obs = simulate_trial(&setup, 5)?;
            let opts = CoarseOptions { layout, ..Default::default() };
            let est = coarse_estimate_with(&obs, &opts)?;
            let truth = risloc::geometry::forward_map(&setup.state, &setup.config.bs)?;
            let e = channel_errors(&est.eta_hat, &truth);
            println!(
                "{:>8} {:>8} {:>10.2e} {:>10.2e} {:>10.2e} {:>10.2e} {:>10.2e}",
                snr,
                format!("{layout:?}").to_lowercase(),
                e[0],
                e[1],
                e[2],
                e[3],
                e[4]
            );
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
