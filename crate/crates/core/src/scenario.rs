//! Scenario configuration: system parameters, array geometries, poses and
//! power/noise levels, with loading from TOML files.

use std::path::Path;

use serde::Deserialize;

use crate::channel::ArrayGeometry;
use crate::error::{Error, Result};
use crate::geometry::{path_delays, LocalizationState, Pose, Vec3, SPEED_OF_LIGHT};

/// dBm to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0) * 1e-3
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * (w / 1e-3).log10()
}

/// Thermal noise power over `bandwidth` for a PSD in dBm/Hz and a noise figure in dB.
pub fn noise_power(psd_dbm_hz: f64, noise_figure_db: f64, bandwidth: f64) -> f64 {
    dbm_to_watts(psd_dbm_hz + noise_figure_db) * bandwidth
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    /// Carrier frequency, Hz.
    pub f_c: f64,
    /// Bandwidth, Hz.
    pub bandwidth: f64,
    /// Number of subcarriers K.
    pub subcarriers: usize,
    /// Number of transmissions G (a perfect square).
    pub transmissions: usize,
    /// UE transmit power, W.
    pub p_t: f64,
    /// Active RIS power supply, W. Zero means a passive RIS.
    pub p_r: f64,
    /// Receiver noise power per antenna, W.
    pub sigma0_sq: f64,
    /// Per-element RIS thermal noise power, W.
    pub sigmar_sq: f64,
    pub bs: Pose,
    pub bs_array: ArrayGeometry,
    pub ris_array: ArrayGeometry,
    /// RF chains along the two BS array axes.
    pub rfc: [usize; 2],
    /// Ground-truth UE/RIS state used for synthesis.
    pub truth: LocalizationState,
    pub seed: u64,
}

impl ScenarioConfig {
    /// Default indoor scenario: 28 GHz, 100 MHz, 32 subcarriers, 9 transmissions.
    pub fn nominal() -> Self {
        let f_c = 28e9;
        let bandwidth = 100e6;
        let lambda = SPEED_OF_LIGHT / f_c;
        let noise = noise_power(-174.0, 10.0, bandwidth);
        Self {
            f_c,
            bandwidth,
            subcarriers: 32,
            transmissions: 9,
            p_t: dbm_to_watts(10.0),
            p_r: dbm_to_watts(7.0),
            sigma0_sq: noise,
            sigmar_sq: noise,
            bs: Pose::new([0.0, 5.0, 3.0], [0.0, 0.0, -std::f64::consts::FRAC_PI_2]),
            bs_array: ArrayGeometry::upa(10, 10, 0.5 * lambda),
            ris_array: ArrayGeometry::upa(15, 15, 0.2 * lambda),
            rfc: [5, 5],
            truth: LocalizationState {
                p_u: Vec3::new(3.0, 2.0, 1.0),
                p_r: Vec3::new(-5.0, 0.0, 3.0),
                o3: 0.0,
                clock_bias: 100e-9,
                fixed_o1_o2: [0.0, 0.0],
            },
            seed: 1,
        }
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.f_c
    }

    /// Subcarrier spacing Δf = B/K.
    pub fn delta_f(&self) -> f64 {
        self.bandwidth / self.subcarriers as f64
    }

    /// Number of RF-chain ports M = N1·N2.
    pub fn ports(&self) -> usize {
        self.rfc[0] * self.rfc[1]
    }

    /// √G, the side of each RIS profile factor.
    pub fn sqrt_g(&self) -> Result<usize> {
        let r = (self.transmissions as f64).sqrt().round() as usize;
        if r * r != self.transmissions {
            return Err(Error::InvalidInput(format!(
                "G = {} is not a perfect square",
                self.transmissions
            )));
        }
        Ok(r)
    }

    /// Copy with both noise powers multiplied by `s`.
    pub fn with_noise_scale(&self, s: f64) -> Self {
        let mut c = self.clone();
        c.sigma0_sq *= s;
        c.sigmar_sq *= s;
        c
    }

    /// Copy configured as a passive RIS (no supply, no RIS noise).
    pub fn passive(&self) -> Self {
        let mut c = self.clone();
        c.p_r = 0.0;
        c.sigmar_sq = 0.0;
        c
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.f_c > 0.0 && self.f_c.is_finite()) {
            return bad(format!("carrier frequency must be positive, got {}", self.f_c));
        }
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return bad(format!("bandwidth must be positive, got {}", self.bandwidth));
        }
        if self.subcarriers < 3 {
            return bad(format!("need at least 3 subcarriers, got {}", self.subcarriers));
        }
        let sg = self.sqrt_g().map_err(|e| Error::Config(e.to_string()))?;
        if sg < 2 {
            return bad("G must be at least 4".into());
        }
        if self.rfc[0] < 2 || self.rfc[1] < 2 {
            return bad(format!("RF chain counts must exceed 1, got {:?}", self.rfc));
        }
        if self.rfc[0] > self.bs_array.n1 || self.rfc[1] > self.bs_array.n2 {
            return bad("more RF chains than BS antennas along an axis".into());
        }
        if sg > self.ris_array.n1 || sg > self.ris_array.n2 {
            return bad("√G exceeds the RIS size along an axis".into());
        }
        for (name, v) in [
            ("transmit power", self.p_t),
            ("RIS power", self.p_r),
            ("receiver noise", self.sigma0_sq),
            ("RIS noise", self.sigmar_sq),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and nonnegative, got {v}"));
            }
        }
        if self.p_t <= 0.0 {
            return bad("transmit power must be positive".into());
        }
        let (_, tau_r) = path_delays(&self.truth, &self.bs.position)
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.truth.clock_bias < 0.0 || tau_r >= 1.0 / self.delta_f() {
            return bad(format!(
                "delays must lie in [0, 1/Δf) = [0, {:.3e}) s; RIS path delay is {:.3e} s",
                1.0 / self.delta_f(),
                tau_r
            ));
        }
        if self.ris_array.spacing > 0.25 * self.wavelength() * (1.0 + 1e-9) {
            log::warn!(
                "RIS spacing {:.3} λ exceeds λ/4: intermediate-angle estimates may alias",
                self.ris_array.spacing / self.wavelength()
            );
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let file: ScenarioFile =
            toml::from_str(s).map_err(|e| Error::Config(format!("malformed scenario: {e}")))?;
        let cfg = file.into_config();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&s)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    #[serde(default = "default_seed")]
    seed: u64,
    system: SystemSection,
    power: PowerSection,
    bs: DeviceSection,
    ris: DeviceSection,
    ue: UeSection,
}

fn default_seed() -> u64 {
    1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemSection {
    carrier_frequency_ghz: f64,
    bandwidth_mhz: f64,
    subcarriers: usize,
    transmissions: usize,
    rfc: [usize; 2],
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PowerSection {
    transmit_dbm: f64,
    #[serde(default)]
    ris_supply_dbm: Option<f64>,
    #[serde(default = "default_psd")]
    noise_psd_dbm_hz: f64,
    #[serde(default = "default_nf")]
    noise_figure_db: f64,
    /// Overrides the PSD-derived receiver noise.
    #[serde(default)]
    receiver_noise_dbm: Option<f64>,
    /// Overrides the PSD-derived RIS element noise.
    #[serde(default)]
    ris_noise_dbm: Option<f64>,
    #[serde(default)]
    passive: bool,
}

fn default_psd() -> f64 {
    -174.0
}

fn default_nf() -> f64 {
    10.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DeviceSection {
    position: [f64; 3],
    #[serde(default)]
    orientation_deg: [f64; 3],
    elements: [usize; 2],
    spacing_wavelengths: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct UeSection {
    position: [f64; 3],
    #[serde(default)]
    clock_bias_ns: f64,
}

impl ScenarioFile {
    fn into_config(self) -> ScenarioConfig {
        let f_c = self.system.carrier_frequency_ghz * 1e9;
        let bandwidth = self.system.bandwidth_mhz * 1e6;
        let lambda = SPEED_OF_LIGHT / f_c;
        let noise = noise_power(self.power.noise_psd_dbm_hz, self.power.noise_figure_db, bandwidth);
        let deg = |v: [f64; 3]| v.map(f64::to_radians);
        let ris_euler = deg(self.ris.orientation_deg);
        let mut p_r = self.power.ris_supply_dbm.map_or(0.0, dbm_to_watts);
        let mut sigmar_sq = self.power.ris_noise_dbm.map_or(noise, dbm_to_watts);
        if self.power.passive {
            p_r = 0.0;
            sigmar_sq = 0.0;
        }
        ScenarioConfig {
            f_c,
            bandwidth,
            subcarriers: self.system.subcarriers,
            transmissions: self.system.transmissions,
            p_t: dbm_to_watts(self.power.transmit_dbm),
            p_r,
            sigma0_sq: self.power.receiver_noise_dbm.map_or(noise, dbm_to_watts),
            sigmar_sq,
            bs: Pose::new(self.bs.position, deg(self.bs.orientation_deg)),
            bs_array: ArrayGeometry::upa(
                self.bs.elements[0],
                self.bs.elements[1],
                self.bs.spacing_wavelengths * lambda,
            ),
            ris_array: ArrayGeometry::upa(
                self.ris.elements[0],
                self.ris.elements[1],
                self.ris.spacing_wavelengths * lambda,
            ),
            rfc: self.system.rfc,
            truth: LocalizationState {
                p_u: Vec3::from(self.ue.position),
                p_r: Vec3::from(self.ris.position),
                o3: ris_euler[2],
                clock_bias: self.ue.clock_bias_ns * 1e-9,
                fixed_o1_o2: [ris_euler[0], ris_euler[1]],
            },
            seed: self.seed,
        }
    }
}
