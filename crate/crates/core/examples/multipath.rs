// Estimation accuracy with random scatter points on every link.

use std::error::Error;

use risloc::harness::{experiment_multipath, ExperimentKind, ExperimentSpec};
use risloc::scenario::ScenarioConfig;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let mut spec = ExperimentSpec::new(ExperimentKind::Multipath);
    spec.trials = 6;
    spec.sweep = vec![0.0, 4.0];
    spec.snr_db = Some(30.0);
    spec.seed = 11;
    let table = experiment_multipath(&ScenarioConfig::nominal(), &spec)?;
    for count in &spec.sweep {
        let row = table.get("estimate", *count, "p_u_q3");
        println!(
            "scatter points {count:>3}: rmse p_u {:.4e} m ({} of {} trials failed)",
            row.map_or(f64::NAN, |r| r.value),
            row.map_or(0, |r| r.failures),
            spec.trials
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
