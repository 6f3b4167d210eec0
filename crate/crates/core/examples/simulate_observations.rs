// Synthesize one uplink observation set for the nominal deployment and
// report its size and per-path received power.

use std::error::Error;

use risloc::channel::{generate_pilots_and_profiles, random_pilots, synthesize_observations, MultipathSet, PathGains};
use risloc::geometry::forward_map;
use risloc::harness::{nominal_snr_db, reference_gains};
use risloc::refine::{model_means, ModelContext};
use risloc::scenario::{watts_to_dbm, ScenarioConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let config = ScenarioConfig::nominal();
    let state = config.truth;
    let design = generate_pilots_and_profiles(&config, config.seed)?;
    let design = design.with_pilots(random_pilots(&config, &mut ChaCha20Rng::seed_from_u64(7)));
    let gains: PathGains = reference_gains(&config, &state, 7)?;

    let obs = synthesize_observations(&config, &design, &state, &gains, &MultipathSet::none(), None, 42)?;
    println!("combiner ports      {}", obs.y.nrows());
    println!("samples per port    {} (G = {}, K = {})", obs.y.ncols(), config.transmissions, config.subcarriers);

    let eta = forward_map(&state, &config.bs)?;
    let means = model_means(&eta, &ModelContext::new(&config, &design));
    let los = (gains.alpha_l.norm_sqr() * means.mu_l.norm_squared()) / obs.y.ncols() as f64;
    let ris = (gains.alpha_r().norm_sqr() * means.mu_r.norm_squared()) / obs.y.ncols() as f64;
    println!("LOS power / sample  {:.1} dBm", watts_to_dbm(los));
    println!("RIS power / sample  {:.1} dBm", watts_to_dbm(ris));
    println!("received SNR        {:.2} dB", nominal_snr_db(&config, &design, &state)?);

    let noise = (&obs.y - &obs.mu).norm_squared() / obs.y.len() as f64;
    println!("noise / sample      {:.1} dBm", watts_to_dbm(noise));
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
