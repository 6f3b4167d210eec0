//! Monte-Carlo experiment driver: trials, sweeps, result tables and
//! blind-area maps.

use std::fmt;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{
    generate_pilots_and_profiles, random_pilots, synthesize_observations, toy_scattering_matrix, ArrayGeometry,
    MeasurementDesign, MultipathSet, ObservationSet, PathGains,
};
use crate::crlb::{
    channel_bounds, complex_noise_covariances, fim_localization, fim_multi_bs, fim_with_priors, localization_bounds, scenario_fims, FimMatrix,
    KnownParam, ScenarioFims,
};
use crate::error::{Error, Result};
use crate::esprit::{coarse_estimate_with, CoarseOptions};
use crate::geometry::{forward_map, ChannelParams, LocalizationState, Pose, Vec3, SPEED_OF_LIGHT};
use crate::linalg::{wrap_pi, CMatrix};
use crate::localize::{grid_search, SearchConfig};
use crate::refine::{ls_refine, model_means, ModelContext, RefineOptions, StopReason};
use crate::scenario::{dbm_to_watts, ScenarioConfig};

pub const CSV_SCHEMA_VERSION: u32 = 1;

const STREAM_PILOTS: u64 = 1;
const STREAM_GAINS: u64 = 2;
const STREAM_NOISE: u64 = 3;
const STREAM_MULTIPATH: u64 = 4;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Order-sensitive hash of seed components.
pub fn mix_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x6A09_E667_F3BC_C909, |h, &p| splitmix64(h ^ splitmix64(p)))
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(mix_seed(&[seed, stream]))
}

/// Random scatter points per channel, drawn uniformly in a box.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ScatterSpec {
    pub count: usize,
    pub lo: [f64; 3],
    pub hi: [f64; 3],
    /// m²
    pub rcs: f64,
}

impl Default for ScatterSpec {
    fn default() -> Self {
        Self {
            count: 0,
            lo: [-5.0, -5.0, 0.0],
            hi: [5.0, 5.0, 5.0],
            rcs: 0.5,
        }
    }
}

/// Everything fixed across the trials of one sweep point.
#[derive(Debug, Clone)]
pub struct TrialSetup {
    pub config: ScenarioConfig,
    /// Combiner and RIS profiles; pilots are redrawn per trial.
    pub design: MeasurementDesign,
    pub state: LocalizationState,
    pub scatter: Option<ScatterSpec>,
    pub mc: Option<CMatrix>,
    pub coarse: CoarseOptions,
    pub search: SearchConfig,
    pub refine: RefineOptions,
}

impl TrialSetup {
    pub fn new(config: &ScenarioConfig, design_seed: u64) -> Result<Self> {
        config.validate()?;
        let design = generate_pilots_and_profiles(config, design_seed)?;
        Ok(Self {
            config: config.clone(),
            design,
            state: config.truth,
            scatter: None,
            mc: None,
            coarse: CoarseOptions::default(),
            search: SearchConfig::new(config.delta_f()).with_ris_spacing(config.ris_array.spacing, config.wavelength()),
            refine: RefineOptions::default(),
        })
    }

    pub fn with_rounds(mut self, rounds: usize) -> Self {
        self.search.rounds = rounds;
        self
    }
}

/// Stage-wise estimates of one trial. Stage failures are recorded, not raised.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub seed: u64,
    pub truth: ChannelParams,
    pub coarse: Option<ChannelParams>,
    pub refined: Option<ChannelParams>,
    pub refine_stop: Option<StopReason>,
    pub refine_cost: Option<(f64, f64)>,
    /// Localization after the initial grid and after each refinement round.
    pub rounds: Vec<LocalizationState>,
    pub failure: Option<String>,
}

impl TrialOutcome {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }
}

/// Synthesize one observation set from `seed` and run coarse estimation,
/// least-squares refinement and the grid search.
pub fn run_trial(setup: &TrialSetup, seed: u64) -> TrialOutcome {
    match simulate_trial(setup, seed) {
        Ok(obs) => estimate_trial(setup, &obs, seed),
        Err(e) => TrialOutcome {
            seed,
            truth: forward_map(&setup.state, &setup.config.bs).unwrap_or(ChannelParams::from_array(&[f64::NAN; 8])),
            coarse: None,
            refined: None,
            refine_stop: None,
            refine_cost: None,
            rounds: Vec::new(),
            failure: Some(e.to_string()),
        },
    }
}

/// Observations of one trial: pilots, gains, scatter points and noise are
/// drawn from independent streams of `seed`.
pub fn simulate_trial(setup: &TrialSetup, seed: u64) -> Result<ObservationSet> {
    let cfg = &setup.config;
    let design = setup.design.with_pilots(random_pilots(cfg, &mut stream_rng(seed, STREAM_PILOTS)));
    let gains = PathGains::random(cfg, &setup.state, &mut stream_rng(seed, STREAM_GAINS))?;
    let multipath = match &setup.scatter {
        Some(s) => MultipathSet::random(
            s.count,
            Vec3::from(s.lo),
            Vec3::from(s.hi),
            s.rcs,
            &mut stream_rng(seed, STREAM_MULTIPATH),
        ),
        None => MultipathSet::none(),
    };
    synthesize_observations(
        cfg,
        &design,
        &setup.state,
        &gains,
        &multipath,
        setup.mc.as_ref(),
        mix_seed(&[seed, STREAM_NOISE]),
    )
}

/// Coarse estimation, refinement and grid search on `obs`.
pub fn estimate_trial(setup: &TrialSetup, obs: &ObservationSet, seed: u64) -> TrialOutcome {
    let truth = forward_map(&setup.state, &setup.config.bs).unwrap_or(ChannelParams::from_array(&[f64::NAN; 8]));
    let mut out = TrialOutcome {
        seed,
        truth,
        coarse: None,
        refined: None,
        refine_stop: None,
        refine_cost: None,
        rounds: Vec::new(),
        failure: None,
    };
    if let Err(e) = estimation_stages(setup, obs, &mut out) {
        out.failure = Some(e.to_string());
    }
    out
}

fn estimation_stages(setup: &TrialSetup, obs: &ObservationSet, out: &mut TrialOutcome) -> Result<()> {
    let coarse = coarse_estimate_with(obs, &setup.coarse)?;
    out.coarse = Some(coarse.eta_hat);
    let refined = ls_refine(&coarse.eta_hat, obs, &setup.refine)?;
    out.refined = Some(refined.eta);
    out.refine_stop = Some(refined.stop);
    out.refine_cost = Some((refined.initial_cost, refined.final_cost));
    let search = grid_search(&refined.eta, &setup.search, &setup.config.bs)?;
    out.rounds = search.rounds.iter().map(|r| r.state).collect();
    Ok(())
}

/// Per-parameter absolute errors: θ_L, θ_R (rad, az/el combined), τ_L, τ_R
/// (m) and ϑ (2-norm).
pub fn channel_errors(est: &ChannelParams, truth: &ChannelParams) -> [f64; 5] {
    let ang = |a: crate::geometry::AnglePair, b: crate::geometry::AnglePair| {
        wrap_pi(a.az - b.az).hypot(a.el - b.el)
    };
    [
        ang(est.theta_l, truth.theta_l),
        ang(est.theta_r, truth.theta_r),
        SPEED_OF_LIGHT * (est.tau_l - truth.tau_l).abs(),
        SPEED_OF_LIGHT * (est.tau_r - truth.tau_r).abs(),
        (est.vartheta2 - truth.vartheta2).hypot(est.vartheta3 - truth.vartheta3),
    ]
}

pub const CHANNEL_METRICS: [&str; 5] = ["theta_l", "theta_r", "tau_l_m", "tau_r_m", "vartheta"];
pub const LOCALIZATION_METRICS: [&str; 4] = ["p_u", "p_r", "o3_deg", "delta_m"];

/// `‖Δp_U‖`, `‖Δp_R‖` (m), `|Δo3|` (deg) and `c|ΔΔ|` (m).
pub fn localization_errors(est: &LocalizationState, truth: &LocalizationState) -> [f64; 4] {
    [
        (est.p_u - truth.p_u).norm(),
        (est.p_r - truth.p_r).norm(),
        wrap_pi(est.o3 - truth.o3).abs().to_degrees(),
        SPEED_OF_LIGHT * (est.clock_bias - truth.clock_bias).abs(),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmseStat {
    pub rmse: f64,
    /// 95 % normal-approximation half-width, propagated from the squared errors.
    pub half_width: f64,
    pub count: usize,
}

pub fn rmse_stat(errors: &[f64]) -> RmseStat {
    let n = errors.len();
    if n == 0 {
        return RmseStat {
            rmse: f64::NAN,
            half_width: f64::NAN,
            count: 0,
        };
    }
    let sq: Vec<f64> = errors.iter().map(|e| e * e).collect();
    let mse = sq.iter().sum::<f64>() / n as f64;
    let var = if n > 1 {
        sq.iter().map(|s| (s - mse).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    let rmse = mse.sqrt();
    let hw_mse = 1.96 * (var / n as f64).sqrt();
    RmseStat {
        rmse,
        half_width: if rmse > 0.0 { hw_mse / (2.0 * rmse) } else { 0.0 },
        count: n,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub group: String,
    pub sweep: f64,
    pub metric: String,
    pub value: f64,
    /// Trials behind the value; zero for analytic bounds.
    pub trials: usize,
    pub failures: usize,
    pub half_width: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    /// Name of the sweep axis, used as the CSV column header.
    pub axis: String,
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn new(axis: &str) -> Self {
        Self {
            axis: axis.to_string(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, group: &str, sweep: f64, metric: &str, value: f64, trials: usize, failures: usize, half_width: f64) {
        self.rows.push(ResultRow {
            group: group.to_string(),
            sweep,
            metric: metric.to_string(),
            value,
            trials,
            failures,
            half_width,
        });
    }

    fn push_rmse(&mut self, group: &str, sweep: f64, metric: &str, errors: &[f64], declared: usize) {
        let s = rmse_stat(errors);
        self.push(group, sweep, metric, s.rmse, declared, declared - s.count, s.half_width);
    }

    pub fn get(&self, group: &str, sweep: f64, metric: &str) -> Option<&ResultRow> {
        self.rows
            .iter()
            .find(|r| r.group == group && r.metric == metric && r.sweep == sweep)
    }

    pub fn value(&self, group: &str, sweep: f64, metric: &str) -> Option<f64> {
        self.get(group, sweep, metric).map(|r| r.value)
    }

    /// `(sweep, value)` pairs of one metric in sweep order.
    pub fn series(&self, group: &str, metric: &str) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .filter(|r| r.group == group && r.metric == metric)
            .map(|r| (r.sweep, r.value))
            .collect()
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["group", self.axis.as_str(), "metric", "value", "trials", "failures", "half_width"])
            .map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                r.group.clone(),
                r.sweep.to_string(),
                r.metric.clone(),
                r.value.to_string(),
                r.trials.to_string(),
                r.failures.to_string(),
                r.half_width.to_string(),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        ensure_parent(path)?;
        std::fs::write(path, self.to_csv_string()?)?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    Ok(())
}

/// Writes `y` as `g,k,port,re,im` rows; floats round-trip exactly.
pub fn write_observations_csv(obs: &ObservationSet, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["g", "k", "port", "re", "im"]).map_err(csv_err)?;
    for g in 0..obs.config.transmissions {
        for k in 0..obs.config.subcarriers {
            let col = obs.column_index(g, k);
            for m in 0..obs.y.nrows() {
                let v = obs.y[(m, col)];
                w.write_record([g.to_string(), k.to_string(), m.to_string(), v.re.to_string(), v.im.to_string()])
                    .map_err(csv_err)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Replaces `obs.y` with the samples in a file written by [`write_observations_csv`].
/// Every entry must appear exactly once.
pub fn read_observations_csv(obs: &mut ObservationSet, path: &Path) -> Result<()> {
    #[derive(Deserialize)]
    struct Row {
        g: usize,
        k: usize,
        port: usize,
        re: f64,
        im: f64,
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let (gn, kn, mn) = (obs.config.transmissions, obs.config.subcarriers, obs.y.nrows());
    let mut seen = vec![false; gn * kn * mn];
    let mut y = CMatrix::zeros(mn, gn * kn);
    for row in r.deserialize::<Row>() {
        let row = row.map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if row.g >= gn || row.k >= kn || row.port >= mn {
            return Err(Error::Config(format!("observation index ({}, {}, {}) out of range", row.g, row.k, row.port)));
        }
        let col = obs.column_index(row.g, row.k);
        let flat = col * mn + row.port;
        if std::mem::replace(&mut seen[flat], true) {
            return Err(Error::Config(format!("duplicate observation ({}, {}, {})", row.g, row.k, row.port)));
        }
        y[(row.port, col)] = crate::linalg::C64::new(row.re, row.im);
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::Config(format!("{} lacks {} observations (first at flat index {missing})", path.display(), seen.iter().filter(|s| !**s).count())));
    }
    obs.y = y;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Deserialize, Serialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    RmseVsSnr,
    ActiveVsPassive,
    Multipath,
    MutualCoupling,
    BlindMap,
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::RmseVsSnr => "rmse-vs-snr",
            Self::ActiveVsPassive => "active-vs-passive",
            Self::Multipath => "multipath",
            Self::MutualCoupling => "mutual-coupling",
            Self::BlindMap => "blind-map",
        };
        f.write_str(s)
    }
}

impl ExperimentKind {
    pub fn axis(&self) -> &'static str {
        match self {
            Self::RmseVsSnr => "snr_db",
            Self::ActiveVsPassive => "p_var_dbm",
            Self::Multipath => "scatter_points",
            Self::MutualCoupling => "ris_spacing_wavelengths",
            Self::BlindMap => "cell",
        }
    }

    pub fn default_sweep(&self) -> Vec<f64> {
        match self {
            Self::RmseVsSnr => vec![-10.0, 0.0, 10.0, 20.0, 30.0, 40.0],
            Self::ActiveVsPassive => vec![-20.0, -10.0, 0.0, 10.0, 20.0, 30.0, 40.0],
            Self::Multipath => vec![0.0, 2.0, 4.0, 6.0],
            Self::MutualCoupling => vec![0.1, 0.2, 0.3, 0.4, 0.5],
            Self::BlindMap => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Deserialize, Serialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum BlindVariant {
    Baseline,
    KnownO3,
    KnownDelta,
    KnownBoth,
    OneExtraBs,
    TwoExtraBs,
}

impl BlindVariant {
    pub const ALL: [BlindVariant; 6] = [
        Self::Baseline,
        Self::KnownO3,
        Self::KnownDelta,
        Self::KnownBoth,
        Self::OneExtraBs,
        Self::TwoExtraBs,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::KnownO3 => "known-o3",
            Self::KnownDelta => "known-delta",
            Self::KnownBoth => "known-both",
            Self::OneExtraBs => "one-extra-bs",
            Self::TwoExtraBs => "two-extra-bs",
        }
    }

    fn known(&self) -> &'static [KnownParam] {
        match self {
            Self::KnownO3 => &[KnownParam::O3],
            Self::KnownDelta => &[KnownParam::Delta],
            Self::KnownBoth => &[KnownParam::O3, KnownParam::Delta],
            _ => &[],
        }
    }

    fn extra_bs(&self) -> usize {
        match self {
            Self::OneExtraBs => 1,
            Self::TwoExtraBs => 2,
            _ => 0,
        }
    }
}

/// One experiment: kind, sweep, trial count and seeds.
#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    /// Scenario file; the built-in nominal scenario when absent.
    #[serde(default)]
    pub scenario: Option<PathBuf>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Master seed for per-trial seeds.
    #[serde(default)]
    pub seed: u64,
    /// Seed of the combiner and RIS profiles; the scenario seed when absent.
    #[serde(default)]
    pub design_seed: Option<u64>,
    /// Sweep values; kind-specific defaults when empty.
    #[serde(default)]
    pub sweep: Vec<f64>,
    /// Fixed received SNR for multipath and coupling sweeps.
    #[serde(default)]
    pub snr_db: Option<f64>,
    /// Grid-search refinement rounds Q.
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default)]
    pub scatter: ScatterSpec,
    #[serde(default = "default_mc_scale")]
    pub mc_scale: f64,
    #[serde(default = "default_mc_decay")]
    pub mc_decay_wavelengths: f64,
    /// RIS supply powers for the coupling sweep, dBm.
    #[serde(default = "default_ris_powers")]
    pub ris_power_dbm: Vec<f64>,
    /// Cells per side of the blind-area map.
    #[serde(default = "default_grid")]
    pub grid: usize,
    /// EB(p_U) above which a cell counts as blind, m.
    #[serde(default = "default_blind_threshold")]
    pub blind_threshold: f64,
    #[serde(default = "default_variants")]
    pub variants: Vec<BlindVariant>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_trials() -> usize {
    100
}
fn default_rounds() -> usize {
    3
}
fn default_mc_scale() -> f64 {
    1e-3
}
fn default_mc_decay() -> f64 {
    0.1
}
fn default_ris_powers() -> Vec<f64> {
    vec![-10.0, 7.0, 20.0]
}
fn default_grid() -> usize {
    50
}
fn default_blind_threshold() -> f64 {
    1.0
}
fn default_variants() -> Vec<BlindVariant> {
    BlindVariant::ALL.to_vec()
}

impl ExperimentSpec {
    pub fn new(kind: ExperimentKind) -> Self {
        Self {
            kind,
            scenario: None,
            trials: default_trials(),
            seed: 0,
            design_seed: None,
            sweep: Vec::new(),
            snr_db: None,
            rounds: default_rounds(),
            scatter: ScatterSpec::default(),
            mc_scale: default_mc_scale(),
            mc_decay_wavelengths: default_mc_decay(),
            ris_power_dbm: default_ris_powers(),
            grid: default_grid(),
            blind_threshold: default_blind_threshold(),
            variants: default_variants(),
            output: None,
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let spec: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&s)
    }

    pub fn sweep_values(&self) -> Vec<f64> {
        if self.sweep.is_empty() {
            self.kind.default_sweep()
        } else {
            self.sweep.clone()
        }
    }

    pub fn design_seed_for(&self, config: &ScenarioConfig) -> u64 {
        self.design_seed.unwrap_or(config.seed)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.trials == 0 {
            return bad("trials must be at least 1");
        }
        let sweep = self.sweep_values();
        if sweep.iter().any(|v| !v.is_finite()) {
            return bad("sweep values must be finite");
        }
        if sweep.windows(2).any(|w| w[1] <= w[0]) {
            return bad("sweep values must be strictly increasing");
        }
        if self.kind == ExperimentKind::Multipath && sweep.iter().any(|v| *v < 0.0 || v.fract() != 0.0) {
            return bad("scatter-point counts must be nonnegative integers");
        }
        if self.kind == ExperimentKind::MutualCoupling && sweep.iter().any(|v| *v <= 0.0) {
            return bad("RIS spacings must be positive");
        }
        if self.grid < 2 {
            return bad("grid must have at least 2 cells per side");
        }
        if !(self.blind_threshold > 0.0) {
            return bad("blind threshold must be positive");
        }
        if self.scatter.rcs < 0.0 || (0..3).any(|i| self.scatter.hi[i] < self.scatter.lo[i]) {
            return bad("invalid scatter box or RCS");
        }
        if self.mc_scale < 0.0 || self.mc_decay_wavelengths <= 0.0 {
            return bad("invalid coupling model parameters");
        }
        Ok(())
    }
}

/// Sidecar metadata written next to every result table.
#[derive(Debug, Clone, Serialize)]
pub struct RunMetadata {
    pub schema_version: u32,
    pub kind: String,
    pub master_seed: u64,
    pub design_seed: u64,
    pub trials: usize,
    pub seed_rule: String,
}

impl RunMetadata {
    pub fn new(spec: &ExperimentSpec, config: &ScenarioConfig) -> Self {
        Self {
            schema_version: CSV_SCHEMA_VERSION,
            kind: spec.kind.to_string(),
            master_seed: spec.seed,
            design_seed: spec.design_seed_for(config),
            trials: spec.trials,
            seed_rule: "trial seed = mix_seed([master_seed, sweep_index, trial_index])".into(),
        }
    }

    pub fn write(&self, csv_path: &Path) -> Result<PathBuf> {
        let path = csv_path.with_extension("meta.toml");
        let s = toml::to_string(self).map_err(|e| Error::Io(e.to_string()))?;
        ensure_parent(&path)?;
        std::fs::write(&path, s)?;
        Ok(path)
    }
}

/// LOS gains with seeded phases, shared by all bound computations of a design.
pub fn reference_gains(config: &ScenarioConfig, state: &LocalizationState, seed: u64) -> Result<PathGains> {
    PathGains::random(config, state, &mut stream_rng(seed, STREAM_GAINS))
}

/// Received SNR of the multipath-free model with the LOS and RIS path
/// powers added incoherently, so it does not depend on gain phases.
pub fn nominal_snr_db(config: &ScenarioConfig, design: &MeasurementDesign, state: &LocalizationState) -> Result<f64> {
    let gains = reference_gains(config, state, 0)?;
    let eta = forward_map(state, &config.bs)?;
    let means = model_means(&eta, &ModelContext::new(config, design));
    let signal = gains.alpha_l.norm_sqr() * means.mu_l.norm_squared() + gains.alpha_r().norm_sqr() * means.mu_r.norm_squared();
    let noise: f64 = complex_noise_covariances(config, design, state, &gains, None)?
        .iter()
        .map(|c| c.trace().re)
        .sum::<f64>()
        * config.subcarriers as f64;
    Ok(crate::channel::snr_db(&CMatrix::from_element(1, 1, signal.sqrt().into()), noise))
}

/// Joint noise scale that moves the SNR from `nominal_db` to `target_db`.
pub fn noise_scale_for_snr(nominal_db: f64, target_db: f64) -> f64 {
    10f64.powf((nominal_db - target_db) / 10.0)
}

fn run_trials(setup: &TrialSetup, master: u64, sweep_index: usize, trials: usize) -> Vec<TrialOutcome> {
    (0..trials)
        .into_par_iter()
        .map(|t| run_trial(setup, mix_seed(&[master, sweep_index as u64, t as u64])))
        .collect()
}

fn add_trial_rows(table: &mut ResultTable, group: &str, sweep: f64, outcomes: &[TrialOutcome], state: &LocalizationState, rounds: usize) {
    let n = outcomes.len();
    for (stage, pick) in [("coarse", 0usize), ("refined", 1)] {
        let errs: Vec<[f64; 5]> = outcomes
            .iter()
            .filter_map(|o| if pick == 0 { o.coarse } else { o.refined }.map(|e| channel_errors(&e, &o.truth)))
            .collect();
        for (i, m) in CHANNEL_METRICS.iter().enumerate() {
            let col: Vec<f64> = errs.iter().map(|e| e[i]).collect();
            table.push_rmse(group, sweep, &format!("{stage}_{m}"), &col, n);
        }
    }
    for q in 0..=rounds {
        let errs: Vec<[f64; 4]> = outcomes
            .iter()
            .filter_map(|o| o.rounds.get(q).map(|s| localization_errors(s, state)))
            .collect();
        for (i, m) in LOCALIZATION_METRICS.iter().enumerate() {
            let col: Vec<f64> = errs.iter().map(|e| e[i]).collect();
            table.push_rmse(group, sweep, &format!("{m}_q{q}"), &col, n);
        }
    }
}

/// Bounds of the parameters reported by the experiments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundSet {
    pub theta_l: f64,
    pub theta_r: f64,
    /// m
    pub tau_l: f64,
    /// m
    pub tau_r: f64,
    pub vartheta: f64,
    pub p_u: f64,
    pub p_r: f64,
    /// deg
    pub o3_deg: f64,
    /// m
    pub delta_m: f64,
}

impl BoundSet {
    pub fn from_fims(f: &ScenarioFims) -> Result<Self> {
        let c = channel_bounds(&f.eta)?;
        let l = localization_bounds(&f.xi)?;
        Ok(Self {
            theta_l: c.theta_l,
            theta_r: c.theta_r,
            tau_l: c.tau_l * SPEED_OF_LIGHT,
            tau_r: c.tau_r * SPEED_OF_LIGHT,
            vartheta: c.vartheta,
            p_u: l.p_u,
            p_r: l.p_r,
            o3_deg: l.o3.to_degrees(),
            delta_m: l.delta * SPEED_OF_LIGHT,
        })
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            theta_l: self.theta_l * s,
            theta_r: self.theta_r * s,
            tau_l: self.tau_l * s,
            tau_r: self.tau_r * s,
            vartheta: self.vartheta * s,
            p_u: self.p_u * s,
            p_r: self.p_r * s,
            o3_deg: self.o3_deg * s,
            delta_m: self.delta_m * s,
        }
    }

    pub fn entries(&self) -> [(&'static str, f64); 9] {
        [
            ("eb_theta_l", self.theta_l),
            ("eb_theta_r", self.theta_r),
            ("eb_tau_l_m", self.tau_l),
            ("eb_tau_r_m", self.tau_r),
            ("eb_vartheta", self.vartheta),
            ("eb_p_u", self.p_u),
            ("eb_p_r", self.p_r),
            ("eb_o3_deg", self.o3_deg),
            ("eb_delta_m", self.delta_m),
        ]
    }

    pub fn push_rows(&self, table: &mut ResultTable, group: &str, sweep: f64) {
        for (m, v) in self.entries() {
            table.push(group, sweep, m, v, 0, 0, 0.0);
        }
    }
}

/// Design, nominal SNR and FIMs of a scenario at its configured noise.
#[derive(Debug, Clone)]
pub struct NominalAnalysis {
    pub setup: TrialSetup,
    pub snr_db: f64,
    pub fims: ScenarioFims,
    pub bounds: BoundSet,
}

pub fn nominal_analysis(config: &ScenarioConfig, design_seed: u64) -> Result<NominalAnalysis> {
    let setup = TrialSetup::new(config, design_seed)?;
    let snr_db = nominal_snr_db(&setup.config, &setup.design, &setup.state)?;
    let gains = reference_gains(config, &setup.state, design_seed)?;
    let fims = scenario_fims(config, &setup.design, &setup.state, &gains, None)?;
    let bounds = BoundSet::from_fims(&fims)?;
    Ok(NominalAnalysis {
        setup,
        snr_db,
        fims,
        bounds,
    })
}

/// RMSE of channel and localization parameters versus received SNR, with
/// bounds; SNR is set by scaling both noise powers jointly.
pub fn experiment_rmse_vs_snr(config: &ScenarioConfig, spec: &ExperimentSpec) -> Result<ResultTable> {
    spec.validate()?;
    let nominal = nominal_analysis(config, spec.design_seed_for(config))?;
    let base = nominal.setup.clone().with_rounds(spec.rounds);
    let mut table = ResultTable::new(spec.kind.axis());
    for (si, snr) in spec.sweep_values().into_iter().enumerate() {
        let s = noise_scale_for_snr(nominal.snr_db, snr);
        let mut setup = base.clone();
        setup.config = base.config.with_noise_scale(s);
        let outcomes = run_trials(&setup, spec.seed, si, spec.trials);
        add_trial_rows(&mut table, "estimate", snr, &outcomes, &setup.state, spec.rounds);
        nominal.bounds.scaled(s.sqrt()).push_rows(&mut table, "bound", snr);
    }
    Ok(table)
}

/// Scenario variants compared by the active-versus-passive study.
pub fn active_passive_configs(config: &ScenarioConfig, p_var_dbm: f64) -> (ScenarioConfig, ScenarioConfig) {
    let mut active = config.clone();
    active.p_r = dbm_to_watts(p_var_dbm);
    let mut passive = config.passive();
    passive.p_t = config.p_t + dbm_to_watts(p_var_dbm);
    (active, passive)
}

/// Bounds for an active RIS with supply `P_var` and a passive RIS whose
/// UE transmits `P_T + P_var`.
pub fn active_passive_fims(config: &ScenarioConfig, p_var_dbm: f64, design_seed: u64) -> Result<(ScenarioFims, ScenarioFims)> {
    let (active, passive) = active_passive_configs(config, p_var_dbm);
    let gains = reference_gains(config, &config.truth, design_seed)?;
    let fa = {
        let d = generate_pilots_and_profiles(&active, design_seed)?;
        scenario_fims(&active, &d, &active.truth, &gains, None)?
    };
    let fp = {
        let d = generate_pilots_and_profiles(&passive, design_seed)?;
        scenario_fims(&passive, &d, &passive.truth, &gains, None)?
    };
    Ok((fa, fp))
}

pub fn experiment_active_vs_passive(config: &ScenarioConfig, spec: &ExperimentSpec) -> Result<ResultTable> {
    spec.validate()?;
    let seed = spec.design_seed_for(config);
    let mut table = ResultTable::new(spec.kind.axis());
    for p_var in spec.sweep_values() {
        let (fa, fp) = active_passive_fims(config, p_var, seed)?;
        let (active, _) = active_passive_configs(config, p_var);
        let p = crate::channel::scenario_amplification(&active, &active.truth)?;
        for (group, f) in [("active", &fa), ("passive", &fp)] {
            let l = localization_bounds(&f.xi)?;
            table.push(group, p_var, "eb_p_u", l.p_u, 0, 0, 0.0);
            table.push(group, p_var, "eb_p_r", l.p_r, 0, 0, 0.0);
            table.push(group, p_var, "eb_o3_deg", l.o3.to_degrees(), 0, 0, 0.0);
        }
        table.push("active", p_var, "amplification", p, 0, 0, 0.0);
    }
    Ok(table)
}

/// RMSE versus the number of scatter points per channel at a fixed SNR.
pub fn experiment_multipath(config: &ScenarioConfig, spec: &ExperimentSpec) -> Result<ResultTable> {
    spec.validate()?;
    let nominal = nominal_analysis(config, spec.design_seed_for(config))?;
    let snr = spec.snr_db.unwrap_or(30.0);
    let s = noise_scale_for_snr(nominal.snr_db, snr);
    let mut base = nominal.setup.clone().with_rounds(spec.rounds);
    base.config = base.config.with_noise_scale(s);
    let mut table = ResultTable::new(spec.kind.axis());
    for (si, count) in spec.sweep_values().into_iter().enumerate() {
        let mut setup = base.clone();
        setup.scatter = Some(ScatterSpec {
            count: count as usize,
            ..spec.scatter
        });
        let outcomes = run_trials(&setup, spec.seed, si, spec.trials);
        add_trial_rows(&mut table, "estimate", count, &outcomes, &setup.state, spec.rounds);
        nominal.bounds.scaled(s.sqrt()).push_rows(&mut table, "bound", count);
    }
    Ok(table)
}

/// Scenario with a different RIS element spacing and supply power.
pub fn coupling_config(config: &ScenarioConfig, spacing_wavelengths: f64, ris_power_dbm: f64) -> ScenarioConfig {
    let mut c = config.clone();
    c.ris_array = ArrayGeometry::upa(c.ris_array.n1, c.ris_array.n2, spacing_wavelengths * c.wavelength());
    c.p_r = dbm_to_watts(ris_power_dbm);
    c
}

/// RMSE(p_U) versus RIS spacing with and without coupling in the synthesized
/// data; the estimators always assume an uncoupled RIS. Seeds are paired.
pub fn experiment_mutual_coupling(config: &ScenarioConfig, spec: &ExperimentSpec) -> Result<ResultTable> {
    spec.validate()?;
    let design_seed = spec.design_seed_for(config);
    let mut table = ResultTable::new(spec.kind.axis());
    for (si, spacing) in spec.sweep_values().into_iter().enumerate() {
        for &pr in &spec.ris_power_dbm {
            let cfg = coupling_config(config, spacing, pr);
            let mut setup = TrialSetup::new(&cfg, design_seed)?.with_rounds(spec.rounds);
            if let Some(snr) = spec.snr_db {
                let s = noise_scale_for_snr(nominal_snr_db(&cfg, &setup.design, &setup.state)?, snr);
                setup.config = cfg.with_noise_scale(s);
            }
            let s_mat = toy_scattering_matrix(&cfg.ris_array, cfg.wavelength(), spec.mc_scale, spec.mc_decay_wavelengths);
            for (tag, mc) in [("no-mc", None), ("mc", Some(s_mat))] {
                let mut st = setup.clone();
                st.mc = mc;
                let outcomes = run_trials(&st, spec.seed, si, spec.trials);
                let group = format!("pr={pr}dBm/{tag}");
                let q = spec.rounds;
                let errs: Vec<f64> = outcomes
                    .iter()
                    .filter_map(|o| o.rounds.get(q).map(|s| localization_errors(s, &st.state)[0]))
                    .collect();
                table.push_rmse(&group, spacing, "p_u", &errs, spec.trials);
                let errs: Vec<f64> = outcomes
                    .iter()
                    .filter_map(|o| o.refined.map(|e| channel_errors(&e, &o.truth)[4]))
                    .collect();
                table.push_rmse(&group, spacing, "refined_vartheta", &errs, spec.trials);
            }
        }
    }
    Ok(table)
}

/// Base stations added in the multi-BS variants.
pub fn extra_base_stations() -> [Pose; 2] {
    use std::f64::consts::{FRAC_PI_2, PI};
    [
        Pose::new([0.0, -5.0, 3.0], [0.0, 0.0, FRAC_PI_2]),
        Pose::new([5.0, 0.0, 3.0], [0.0, 0.0, PI]),
    ]
}

/// EB(p_U) over UE positions on a square grid at fixed height.
#[derive(Debug, Clone, PartialEq)]
pub struct BlindMap {
    pub variant: BlindVariant,
    /// Cell-centre coordinates, m.
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// Row-major over `ys` then `xs`; `+∞` marks singular cells.
    pub eb: Vec<f64>,
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlindSummary {
    pub blind_fraction: f64,
    /// `log10(max/min)` over finite cells.
    pub dynamic_range_decades: f64,
    pub median: f64,
    pub p95: f64,
    pub singular_cells: usize,
}

/// Quantile with `+∞` entries sorted last.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

impl BlindMap {
    pub fn summary(&self) -> BlindSummary {
        let mut v = self.eb.clone();
        v.sort_by(f64::total_cmp);
        let finite: Vec<f64> = v.iter().copied().filter(|x| x.is_finite()).collect();
        let dyn_range = match (finite.first(), finite.last()) {
            (Some(lo), Some(hi)) if *lo > 0.0 => (hi / lo).log10(),
            _ => f64::NAN,
        };
        BlindSummary {
            blind_fraction: v.iter().filter(|&&x| !(x <= self.threshold)).count() as f64 / v.len() as f64,
            dynamic_range_decades: dyn_range,
            median: quantile(&v, 0.5),
            p95: quantile(&v, 0.95),
            singular_cells: v.len() - finite.len(),
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        ensure_parent(path)?;
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(["x", "y", "eb_p_u"]).map_err(csv_err)?;
        for (iy, y) in self.ys.iter().enumerate() {
            for (ix, x) in self.xs.iter().enumerate() {
                let e = self.eb[iy * self.xs.len() + ix];
                w.write_record([x.to_string(), y.to_string(), e.to_string()]).map_err(csv_err)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Heat map of `log10 EB` between `lo` and `hi` metres; `+y` points up.
    pub fn write_png(&self, path: &Path, lo: f64, hi: f64, pixels_per_cell: u32) -> Result<()> {
        ensure_parent(path)?;
        let (nx, ny) = (self.xs.len() as u32, self.ys.len() as u32);
        let s = pixels_per_cell.max(1);
        let (llo, lhi) = (lo.log10(), hi.log10());
        let img = image::RgbImage::from_fn(nx * s, ny * s, |px, py| {
            let ix = (px / s) as usize;
            let iy = (ny - 1 - py / s) as usize;
            let e = self.eb[iy * nx as usize + ix];
            let t = if e.is_finite() {
                ((e.log10() - llo) / (lhi - llo)).clamp(0.0, 1.0)
            } else {
                1.0
            };
            let c = colorous::VIRIDIS.eval_continuous(t);
            image::Rgb([c.r, c.g, c.b])
        });
        img.save(path).map_err(|e| Error::Io(e.to_string()))
    }
}

/// Per-cell FIM of η for one base station, or `None` for degenerate cells.
fn cell_eta_fim(config: &ScenarioConfig, bs: &Pose, state: &LocalizationState, design_seed: u64) -> Option<FimMatrix> {
    let mut cfg = config.clone();
    cfg.bs = *bs;
    cfg.truth = *state;
    let design = generate_pilots_and_profiles(&cfg, design_seed).ok()?;
    let gains = reference_gains(&cfg, state, design_seed).ok()?;
    scenario_fims(&cfg, &design, state, &gains, None).ok().map(|f| f.eta)
}

fn variant_bound(variant: BlindVariant, state: &LocalizationState, poses: &[Pose], etas: &[Option<FimMatrix>]) -> f64 {
    let n_bs = 1 + variant.extra_bs();
    let eval = || -> Result<f64> {
        let mut per_bs = Vec::with_capacity(n_bs);
        for b in 0..n_bs {
            let j = etas[b]
                .as_ref()
                .ok_or_else(|| Error::DegenerateGeometry("cell geometry".into()))?;
            per_bs.push(if b == 0 {
                fim_with_priors(j, state, &poses[b], variant.known())?
            } else {
                fim_localization(j, state, &poses[b])?
            });
        }
        Ok(localization_bounds(&fim_multi_bs(&per_bs)?)?.p_u)
    };
    eval().unwrap_or(f64::INFINITY)
}

/// Blind-area maps for the requested variants over `[−5, 5]²` at 1 m height,
/// with the amplification factor recomputed per cell.
pub fn blind_maps(config: &ScenarioConfig, spec: &ExperimentSpec, variants: &[BlindVariant]) -> Result<Vec<BlindMap>> {
    spec.validate()?;
    let n = spec.grid;
    let design_seed = spec.design_seed_for(config);
    let centres: Vec<f64> = (0..n).map(|i| -5.0 + 10.0 * (i as f64 + 0.5) / n as f64).collect();
    let extra = extra_base_stations();
    let poses = [config.bs, extra[0], extra[1]];
    let n_bs = 1 + variants.iter().map(|v| v.extra_bs()).max().unwrap_or(0);
    let cells: Vec<Vec<f64>> = (0..n * n)
        .into_par_iter()
        .map(|idx| {
            let state = LocalizationState {
                p_u: Vec3::new(centres[idx % n], centres[idx / n], 1.0),
                ..config.truth
            };
            let etas: Vec<Option<FimMatrix>> = (0..n_bs)
                .map(|b| cell_eta_fim(config, &poses[b], &state, design_seed))
                .collect();
            variants
                .iter()
                .map(|v| variant_bound(*v, &state, &poses, &etas))
                .collect()
        })
        .collect();
    Ok(variants
        .iter()
        .enumerate()
        .map(|(vi, v)| BlindMap {
            variant: *v,
            xs: centres.clone(),
            ys: centres.clone(),
            eb: cells.iter().map(|c| c[vi]).collect(),
            threshold: spec.blind_threshold,
        })
        .collect())
}

/// Runs the table-producing experiment named by `spec.kind`.
pub fn run_experiment(config: &ScenarioConfig, spec: &ExperimentSpec) -> Result<ResultTable> {
    match spec.kind {
        ExperimentKind::RmseVsSnr => experiment_rmse_vs_snr(config, spec),
        ExperimentKind::ActiveVsPassive => experiment_active_vs_passive(config, spec),
        ExperimentKind::Multipath => experiment_multipath(config, spec),
        ExperimentKind::MutualCoupling => experiment_mutual_coupling(config, spec),
        ExperimentKind::BlindMap => {
            let maps = blind_maps(config, spec, &spec.variants)?;
            let mut table = ResultTable::new("variant");
            for (i, m) in maps.iter().enumerate() {
                let s = m.summary();
                let g = m.variant.name();
                table.push(g, i as f64, "blind_fraction", s.blind_fraction, 0, 0, 0.0);
                table.push(g, i as f64, "dynamic_range_decades", s.dynamic_range_decades, 0, 0, 0.0);
                table.push(g, i as f64, "median_eb_p_u", s.median, 0, 0, 0.0);
                table.push(g, i as f64, "p95_eb_p_u", s.p95, 0, 0, 0.0);
                table.push(g, i as f64, "singular_cells", s.singular_cells as f64, 0, 0, 0.0);
            }
            Ok(table)
        }
    }
}
