// Position error bound maps across the room, written as CSV and PNG.

use std::error::Error;

use risloc::harness::{blind_maps, BlindVariant, ExperimentKind, ExperimentSpec};
use risloc::scenario::ScenarioConfig;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let mut spec = ExperimentSpec::new(ExperimentKind::BlindMap);
    spec.grid = 8;
    let variants = [BlindVariant::Baseline, BlindVariant::KnownDelta, BlindVariant::OneExtraBs];
    let maps = blind_maps(&ScenarioConfig::nominal(), &spec, &variants)?;
    let dir = std::env::temp_dir().join("risloc-blind-map-example");
    for m in &maps {
        let s = m.summary();
        println!(
            "{:<14} blind {:.3}  median {:.3e} m  p95 {:.3e} m",
            m.variant.name(),
            s.blind_fraction,
            s.median,
            s.p95
        );
        let path = dir.join(format!("{}.csv", m.variant.name()));
        m.write_csv(&path)?;
        m.write_png(&path.with_extension("png"), 1e-3, 10.0, 16)?;
    }
    println!("maps written to {}", dir.display());
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
