use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use risloc::geometry::forward_map;
use risloc::harness::{
    blind_maps, channel_errors, estimate_trial, localization_errors, nominal_analysis, nominal_snr_db, noise_scale_for_snr,
    read_observations_csv, run_experiment, simulate_trial, write_observations_csv, BlindVariant, ExperimentKind,
    ExperimentSpec, ResultTable, RunMetadata, ScatterSpec, TrialSetup,
};
use risloc::scenario::ScenarioConfig;
use risloc::Error;

const OUT_DIR_ENV: &str = "RISLOC_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "risloc-out";

#[derive(Parser)]
#[command(name = "risloc", version, about = "Active-RIS joint localization and calibration toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ScenarioArgs {
    /// Scenario TOML file; the built-in nominal scenario when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed of the combiner and RIS profiles; the scenario seed when omitted.
    #[arg(long)]
    design_seed: Option<u64>,
    /// Target received SNR in dB, set by scaling both noise powers.
    #[arg(long, allow_hyphen_values = true)]
    snr: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize one observation set and write it as CSV.
    Simulate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Trial seed (pilots, gains, scatter points, noise).
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Scatter points per channel.
        #[arg(long, default_value_t = 0)]
        scatter: usize,
        /// Output directory [default: $RISLOC_OUT_DIR or ./risloc-out].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate channel parameters and localize, from a fresh simulation or a CSV.
    Estimate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Trial seed; with --input it must match the one used by `simulate`.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        scatter: usize,
        /// Observations written by `simulate`.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Grid-search refinement rounds.
        #[arg(long, default_value_t = 2)]
        rounds: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Error bounds of the channel and localization parameters.
    Bounds {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a Monte-Carlo or bound sweep and write a CSV table.
    Experiment {
        kind: ExperimentKind,
        /// Experiment TOML; its `scenario` path is relative to the file.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Scenario TOML, overriding the one named in the spec.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Position error bound maps over the room for the blind-area variants.
    Blindmap {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        design_seed: Option<u64>,
        /// Variants to map; all when omitted.
        #[arg(long = "variant", value_enum)]
        variants: Vec<BlindVariant>,
        /// Cells per side.
        #[arg(long, default_value_t = 50)]
        grid: usize,
        /// Blind threshold on the position bound, m.
        #[arg(long, default_value_t = 1.0)]
        threshold: f64,
        /// Also write PNG heat maps.
        #[arg(long)]
        png: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Usage and configuration problems exit with 2, everything else with 1.
enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) => Failure::Usage(m),
            other => Failure::Runtime(other),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(Failure::Usage(msg.into()))
}

fn out_dir(arg: Option<PathBuf>) -> PathBuf {
    arg.or_else(|| std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

fn load_config(path: Option<&Path>) -> CliResult<ScenarioConfig> {
    match path {
        Some(p) => Ok(ScenarioConfig::from_toml_file(p)?),
        None => Ok(ScenarioConfig::nominal()),
    }
}

fn setup_from(args: &ScenarioArgs) -> CliResult<(TrialSetup, f64)> {
    let config = load_config(args.config.as_deref())?;
    let design_seed = args.design_seed.unwrap_or(config.seed);
    let mut setup = TrialSetup::new(&config, design_seed).map_err(|e| match e {
        Error::InvalidInput(m) => Failure::Usage(m),
        other => other.into(),
    })?;
    let nominal = nominal_snr_db(&setup.config, &setup.design, &setup.state)?;
    let mut scale = 1.0;
    if let Some(snr) = args.snr {
        if !snr.is_finite() {
            return usage("--snr must be finite");
        }
        scale = noise_scale_for_snr(nominal, snr);
        setup.config = setup.config.with_noise_scale(scale);
    }
    Ok((setup, nominal - 10.0 * scale.log10()))
}

fn with_scatter(mut setup: TrialSetup, count: usize) -> TrialSetup {
    if count > 0 {
        setup.scatter = Some(ScatterSpec {
            count,
            ..ScatterSpec::default()
        });
    }
    setup
}

#[derive(Serialize)]
struct SimulationMeta {
    seed: u64,
    design_seed: u64,
    snr_db: f64,
    scatter_points: usize,
    transmissions: usize,
    subcarriers: usize,
    ports: usize,
    /// `[θL az, θL el, θR az, θR el, τL, τR, ϑ2, ϑ3]`
    true_channel: [f64; 8],
    true_p_u: [f64; 3],
    true_p_r: [f64; 3],
    true_o3: f64,
    true_clock_bias: f64,
}

fn simulate(scenario: ScenarioArgs, seed: u64, scatter: usize, out: Option<PathBuf>) -> CliResult<()> {
    let (setup, snr) = setup_from(&scenario)?;
    let design_seed = scenario.design_seed.unwrap_or(setup.config.seed);
    let setup = with_scatter(setup, scatter);
    let obs = simulate_trial(&setup, seed)?;
    let dir = out_dir(out);
    let path = dir.join("observations.csv");
    write_observations_csv(&obs, &path)?;
    let eta = forward_map(&setup.state, &setup.config.bs)?;
    let s = &setup.state;
    let meta = SimulationMeta {
        seed,
        design_seed,
        snr_db: snr,
        scatter_points: scatter,
        transmissions: setup.config.transmissions,
        subcarriers: setup.config.subcarriers,
        ports: setup.config.ports(),
        true_channel: eta.to_array(),
        true_p_u: [s.p_u.x, s.p_u.y, s.p_u.z],
        true_p_r: [s.p_r.x, s.p_r.y, s.p_r.z],
        true_o3: s.o3,
        true_clock_bias: s.clock_bias,
    };
    let meta_path = path.with_extension("meta.toml");
    std::fs::write(&meta_path, toml::to_string(&meta).map_err(|e| Error::Io(e.to_string()))?).map_err(Error::from)?;
    println!("snr_db      {snr:.2}");
    println!("samples     {} x {}", obs.y.nrows(), obs.y.ncols());
    println!("wrote       {}", path.display());
    println!("wrote       {}", meta_path.display());
    Ok(())
}

fn estimate(scenario: ScenarioArgs, seed: u64, scatter: usize, input: Option<PathBuf>, rounds: usize, out: Option<PathBuf>) -> CliResult<()> {
    let (setup, snr) = setup_from(&scenario)?;
    let setup = with_scatter(setup, scatter).with_rounds(rounds);
    let mut obs = simulate_trial(&setup, seed)?;
    if let Some(p) = &input {
        read_observations_csv(&mut obs, p)?;
    }
    let outcome = estimate_trial(&setup, &obs, seed);
    println!("snr_db {snr:.2}");
    let mut table = ResultTable::new("seed");
    let names = ["theta_l", "theta_r", "tau_l_m", "tau_r_m", "vartheta"];
    for (stage, est) in [("coarse", outcome.coarse), ("refined", outcome.refined)] {
        if let Some(e) = est {
            let errs = channel_errors(&e, &outcome.truth);
            println!("{stage:<8} {}", names.iter().zip(errs).map(|(n, v)| format!("{n}={v:.3e}")).collect::<Vec<_>>().join(" "));
            for (n, v) in names.iter().zip(errs) {
                table.push(stage, seed as f64, &format!("err_{n}"), v, 1, 0, 0.0);
            }
        }
    }
    for (q, st) in outcome.rounds.iter().enumerate() {
        let e = localization_errors(st, &setup.state);
        println!(
            "q={q}      p_u=[{:.4}, {:.4}, {:.4}] err_p_u={:.3e} err_p_r={:.3e} err_o3_deg={:.3e}",
            st.p_u.x,
            st.p_u.y,
            st.p_u.z,
            e[0],
            e[1],
            e[2]
        );
        for (n, v) in ["err_p_u", "err_p_r", "err_o3_deg", "err_delta_m"].iter().zip(e) {
            table.push(&format!("q{q}"), seed as f64, n, v, 1, 0, 0.0);
        }
    }
    if let Some(f) = &outcome.failure {
        eprintln!("estimation stopped early: {f}");
    }
    let path = out_dir(out).join("estimate.csv");
    table.write_csv(&path)?;
    println!("wrote {}", path.display());
    if outcome.failure.is_some() {
        return Err(Failure::Runtime(Error::SearchFailed(outcome.failure.unwrap_or_default())));
    }
    Ok(())
}

fn bounds(scenario: ScenarioArgs, out: Option<PathBuf>) -> CliResult<()> {
    let config = load_config(scenario.config.as_deref())?;
    let design_seed = scenario.design_seed.unwrap_or(config.seed);
    let analysis = nominal_analysis(&config, design_seed)?;
    let (snr, scale) = match scenario.snr {
        Some(t) if t.is_finite() => (t, noise_scale_for_snr(analysis.snr_db, t)),
        Some(_) => return usage("--snr must be finite"),
        None => (analysis.snr_db, 1.0),
    };
    let b = analysis.bounds.scaled(scale.sqrt());
    println!("snr_db       {snr:.2}");
    for (name, v) in b.entries() {
        println!("{name:<12} {v:.4e}");
    }
    let mut table = ResultTable::new("snr_db");
    b.push_rows(&mut table, "bound", snr);
    let path = out_dir(out).join("bounds.csv");
    table.write_csv(&path)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn experiment(
    kind: ExperimentKind,
    spec_path: Option<PathBuf>,
    config: Option<PathBuf>,
    trials: Option<usize>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> CliResult<()> {
    let mut spec = match &spec_path {
        Some(p) => {
            let mut s = ExperimentSpec::from_toml_file(p)?;
            if let Some(rel) = s.scenario.take() {
                let base = p.parent().unwrap_or(Path::new(""));
                s.scenario = Some(if rel.is_absolute() { rel } else { base.join(rel) });
            }
            s
        }
        None => ExperimentSpec::new(kind),
    };
    if spec.kind != kind {
        return usage(format!("spec is for `{}`, not `{kind}`", spec.kind));
    }
    if config.is_some() {
        spec.scenario = config;
    }
    if let Some(t) = trials {
        spec.trials = t;
    }
    if let Some(s) = seed {
        spec.seed = s;
    }
    spec.validate()?;
    let cfg = load_config(spec.scenario.as_deref())?;
    let file = spec.output.clone().unwrap_or_else(|| PathBuf::from(format!("{kind}.csv")));
    let path = out_dir(out).join(file);
    log::info!("running {kind}: {} trials, seed {}", spec.trials, spec.seed);
    let table = run_experiment(&cfg, &spec)?;
    table.write_csv(&path)?;
    let meta = RunMetadata::new(&spec, &cfg).write(&path)?;
    println!("wrote {}", path.display());
    println!("wrote {}", meta.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn blindmap(
    config: Option<PathBuf>,
    design_seed: Option<u64>,
    variants: Vec<BlindVariant>,
    grid: usize,
    threshold: f64,
    png: bool,
    out: Option<PathBuf>,
) -> CliResult<()> {
    let cfg = load_config(config.as_deref())?;
    let mut spec = ExperimentSpec::new(ExperimentKind::BlindMap);
    spec.grid = grid;
    spec.blind_threshold = threshold;
    spec.design_seed = design_seed;
    spec.variants = if variants.is_empty() { BlindVariant::ALL.to_vec() } else { variants };
    spec.validate()?;
    let dir = out_dir(out);
    let maps = blind_maps(&cfg, &spec, &spec.variants)?;
    println!("{:<14} {:>8} {:>10} {:>10} {:>8}", "variant", "blind", "median_m", "p95_m", "decades");
    for m in &maps {
        let s = m.summary();
        println!(
            "{:<14} {:>8.4} {:>10.3e} {:>10.3e} {:>8.2}",
            m.variant.name(),
            s.blind_fraction,
            s.median,
            s.p95,
            s.dynamic_range_decades
        );
        let path = dir.join(format!("blindmap_{}.csv", m.variant.name()));
        m.write_csv(&path)?;
        if png {
            m.write_png(&path.with_extension("png"), 1e-3, 10.0, 8)?;
        }
    }
    println!("wrote maps to {}", dir.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { scenario, seed, scatter, out } => simulate(scenario, seed, scatter, out),
        Command::Estimate {
            scenario,
            seed,
            scatter,
            input,
            rounds,
            out,
        } => estimate(scenario, seed, scatter, input, rounds, out),
        Command::Bounds { scenario, out } => bounds(scenario, out),
        Command::Experiment {
            kind,
            spec,
            config,
            trials,
            seed,
            out,
        } => experiment(kind, spec, config, trials, seed, out),
        Command::Blindmap {
            config,
            design_seed,
            variants,
            grid,
            threshold,
            png,
            out,
        } => blindmap(config, design_seed, variants, grid, threshold, png, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
