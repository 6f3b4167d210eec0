// Position bounds for an active RIS against a passive RIS whose UE spends
// the same extra power.

use std::error::Error;

use risloc::harness::{experiment_active_vs_passive, ExperimentKind, ExperimentSpec};
use risloc::scenario::ScenarioConfig;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let spec = ExperimentSpec::new(ExperimentKind::ActiveVsPassive);
    let table = experiment_active_vs_passive(&ScenarioConfig::nominal(), &spec)?;
    println!("{:>10} {:>14} {:>14} {:>14}", "p_var_dbm", "active EB p_u", "passive EB p_u", "amplification");
    for p in spec.sweep_values() {
        println!(
            "{:>10} {:>14.4e} {:>14.4e} {:>14.2}",
            p,
            table.value("active", p, "eb_p_u").unwrap_or(f64::NAN),
            table.value("passive", p, "eb_p_u").unwrap_or(f64::NAN),
            table.value("active", p, "amplification").unwrap_or(f64::NAN)
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
