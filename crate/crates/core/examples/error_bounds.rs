// Fisher-information error bounds for the nominal deployment, including the
// effect of prior knowledge of the RIS orientation or clock bias.

use std::error::Error;

use risloc::crlb::{fim_with_priors, localization_bounds, KnownParam};
use risloc::harness::nominal_analysis;
use risloc::scenario::ScenarioConfig;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let config = ScenarioConfig::nominal();
    let a = nominal_analysis(&config, config.seed)?;
    println!("received SNR {:.2} dB", a.snr_db);
    for (name, v) in a.bounds.entries() {
        println!("  {name:<12} {v:.4e}");
    }
    let eig = a.fims.xi.matrix.clone().symmetric_eigen().eigenvalues;
    println!(
        "localization FIM: asymmetry {:.1e}, eigenvalue ratio min/max {:.1e}",
        a.fims.xi.asymmetry(),
        eig.min() / eig.max()
    );

    for (label, known) in [
        ("o3 known", vec![KnownParam::O3]),
        ("clock bias known", vec![KnownParam::Delta]),
        ("both known", vec![KnownParam::O3, KnownParam::Delta]),
    ] {
        let j = fim_with_priors(&a.fims.eta, &a.setup.state, &config.bs, &known)?;
        let b = localization_bounds(&j)?;
        println!("{label:<17} EB(p_u) {:.4e} m, EB(p_r) {:.4e} m", b.p_u, b.p_r);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
