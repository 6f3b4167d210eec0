// Position error when the RIS elements couple but the estimator assumes
// they do not.

use std::error::Error;

use risloc::harness::{experiment_mutual_coupling, ExperimentKind, ExperimentSpec};
use risloc::scenario::ScenarioConfig;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let mut spec = ExperimentSpec::new(ExperimentKind::MutualCoupling);
    spec.trials = 4;
    spec.sweep = vec![0.2, 0.5];
    spec.ris_power_dbm = vec![7.0];
    spec.seed = 13;
    let table = experiment_mutual_coupling(&ScenarioConfig::nominal(), &spec)?;
    for spacing in &spec.sweep {
        println!(
            "spacing {spacing:.1} lambda: rmse p_u {:.4e} m uncoupled, {:.4e} m coupled",
            table.value("pr=7dBm/no-mc", *spacing, "p_u").unwrap_or(f64::NAN),
            table.value("pr=7dBm/mc", *spacing, "p_u").unwrap_or(f64::NAN)
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
