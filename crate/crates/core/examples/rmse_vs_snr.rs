// Monte-Carlo RMSE against SNR next to the error bounds.
// `risloc experiment rmse-vs-snr` runs the full sweep.

use std::error::Error;

use risloc::harness::{experiment_rmse_vs_snr, ExperimentKind, ExperimentSpec};
use risloc::scenario::ScenarioConfig;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let mut spec = ExperimentSpec::new(ExperimentKind::RmseVsSnr);
    spec.trials = 6;
    spec.sweep = vec![10.0, 30.0];
    spec.rounds = 2;
    spec.seed = 1;
    let table = experiment_rmse_vs_snr(&ScenarioConfig::nominal(), &spec)?;
    println!("{:>8} {:>12} {:>12} {:>12}", "snr_db", "rmse p_u q2", "EB p_u", "rmse vartheta");
    for snr in &spec.sweep {
        println!(
            "{:>8} {:>12.4e} {:>12.4e} {:>12.4e}",
            snr,
            table.value("estimate", *snr, "p_u_q2").unwrap_or(f64::NAN),
            table.value("bound", *snr, "eb_p_u").unwrap_or(f64::NAN),
            table.value("estimate", *snr, "refined_vartheta").unwrap_or(f64::NAN)
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
