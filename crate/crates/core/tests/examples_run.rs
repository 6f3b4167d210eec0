mod active_vs_passive_example {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/active_vs_passive.rs"));
}

#[test]
fn active_vs_passive_example_runs() {
    active_vs_passive_example::run_example().expect("active_vs_passive example should run");
}

mod blind_map_example {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/blind_map.rs"));
}

#[test]
fn blind_map_example_runs() {
    blind_map_example::run_example().expect("blind_map example should run");
}

mod coarse_estimate_example {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/coarse_estimate.rs"));
}

#[test]
fn coarse_estimate_example_runs() {
    coarse_estimate_example::run_example().expect("coarse_estimate example should run");
}

mod custom_scenario_example {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/custom_scenario.rs"));
}

#[test]
fn custom_scenario_example_runs() {
    custom_scenario_example::run_example().expect("custom_scenario example should run");
}

mod error_bounds_example {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/error_bounds.rs"));
}

#[test]
fn error_bounds_example_runs() {
    error_bounds_example::run_example().expect("error_bounds example should run");
}

mod localize_example {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/localize.rs"));
}

#[test]
fn localize_example_runs() {
    localize_example::run_example().expect("localize example should run");
}

mod multipath_example {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/multipath.rs"));
}

#[test]
fn multipath_example_runs() {
    multipath_example::run_example().expect("multipath example should run");
}

mod mutual_coupling_example {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/mutual_coupling.rs"));
}

#[test]
fn mutual_coupling_example_runs() {
    mutual_coupling_example::run_example().expect("mutual_coupling example should run");
}

mod refine_channel_example {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/refine_channel.rs"));
}

#[test]
fn refine_channel_example_runs() {
    refine_channel_example::run_example().expect("refine_channel example should run");
}

mod rmse_vs_snr_example {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/rmse_vs_snr.rs"));
}

#[test]
fn rmse_vs_snr_example_runs() {
    rmse_vs_snr_example::run_example().expect("rmse_vs_snr example should run");
}

mod simulate_observations_example {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/simulate_observations.rs"));
}

#[test]
fn simulate_observations_example_runs() {
    simulate_observations_example::run_example().expect("simulate_observations example should run");
}

mod tensor_cp_example {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/tensor_cp.rs"));
}

#[test]
fn tensor_cp_example_runs() {
    tensor_cp_example::run_example().expect("tensor_cp example should run");
}
