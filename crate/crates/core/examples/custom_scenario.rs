// Load a scenario file, move the UE and run one end-to-end trial.

use std::error::Error;
use std::path::Path;

use risloc::geometry::Vec3;
use risloc::harness::{localization_errors, nominal_analysis, run_trial};
use risloc::scenario::ScenarioConfig;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/nominal.toml");
    let mut config = ScenarioConfig::from_toml_file(&path)?;
    config.truth.p_u = Vec3::new(1.0, -2.0, 1.2);

    let analysis = nominal_analysis(&config, config.seed)?;
    println!("SNR {:.2} dB, EB(p_u) {:.4e} m", analysis.snr_db, analysis.bounds.p_u);

    let outcome = run_trial(&analysis.setup, 21);
    if let Some(f) = &outcome.failure {
        println!("trial failed: {f}");
    }
    if let Some(last) = outcome.rounds.last() {
        let e = localization_errors(last, &config.truth);
        println!("p_u error {:.4e} m, p_r error {:.4e} m, o3 error {:.4e} deg", e[0], e[1], e[2]);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
