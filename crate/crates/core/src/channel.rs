//! Uplink SIMO OFDM observation model: array responses, LOS and multipath
//! channels, active-RIS amplification and noise, optional mutual coupling.
//!
//! Subcarrier indices are zero-based throughout, so subcarrier `k` carries the
//! delay phase `exp(-j2π k Δf τ)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::crlb::NoiseCovariances;
use crate::error::{Error, Result};
use crate::geometry::{aoa_in_lcs, direction_vector, ris_angles, AnglePair, LocalizationState, Vec3, SPEED_OF_LIGHT};
use crate::linalg::{cis, kron, CMatrix, CVector, C64};
use crate::scenario::ScenarioConfig;

use std::f64::consts::PI;

/// Uniform planar array in the YOZ plane of its local frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGeometry {
    pub n1: usize,
    pub n2: usize,
    /// Element spacing, m.
    pub spacing: f64,
    /// Element `i1·n2 + i2` sits at `[0, i1·d, i2·d]`.
    pub positions: Vec<Vec3>,
}

impl ArrayGeometry {
    pub fn upa(n1: usize, n2: usize, spacing: f64) -> Self {
        let mut positions = Vec::with_capacity(n1 * n2);
        for i1 in 0..n1 {
            for i2 in 0..n2 {
                positions.push(Vec3::new(0.0, i1 as f64 * spacing, i2 as f64 * spacing));
            }
        }
        Self {
            n1,
            n2,
            spacing,
            positions,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

pub fn array_response(geom: &ArrayGeometry, a: AnglePair, f_c: f64) -> CVector {
    let t = direction_vector(a);
    let k = 2.0 * PI * f_c / SPEED_OF_LIGHT;
    CVector::from_iterator(geom.len(), geom.positions.iter().map(|p| cis(k * t.dot(p))))
}

/// Amplification factor that consumes the supply `p_r` given the incident
/// power per element.
pub fn amplification_factor(p_r: f64, n_elements: usize, p_in: f64, sigmar_sq: f64) -> Result<f64> {
    if p_r < 0.0 || p_in < 0.0 || sigmar_sq < 0.0 || n_elements == 0 {
        return Err(Error::InvalidInput("powers must be nonnegative".into()));
    }
    if p_r == 0.0 {
        return Ok(1.0);
    }
    let denom = n_elements as f64 * (p_in + sigmar_sq);
    if denom <= 0.0 {
        return Err(Error::InvalidInput(
            "active RIS with zero incident and noise power".into(),
        ));
    }
    Ok((p_r / denom + 1.0).sqrt())
}

/// Power supply required for amplification `p`.
pub fn ris_supply_power(p: f64, n_elements: usize, p_in: f64, sigmar_sq: f64) -> f64 {
    (p * p - 1.0) * n_elements as f64 * (p_in + sigmar_sq)
}

fn uniform_phase(rng: &mut impl Rng) -> f64 {
    rng.random::<f64>() * 2.0 * PI
}

/// Free-space gain `λ/(4πd)` with a uniformly random phase.
pub fn los_gain(distance: f64, lambda_c: f64, rng: &mut impl Rng) -> Result<C64> {
    if distance <= 0.0 {
        return Err(Error::InvalidInput(format!("distance must be positive, got {distance}")));
    }
    Ok(cis(uniform_phase(rng)) * (lambda_c / (4.0 * PI * distance)))
}

pub fn nlos_gain_magnitude(rcs: f64, d1: f64, d2: f64, lambda_c: f64) -> Result<f64> {
    if d1 <= 0.0 || d2 <= 0.0 {
        return Err(Error::InvalidInput("distances must be positive".into()));
    }
    if rcs < 0.0 {
        return Err(Error::InvalidInput("radar cross section must be nonnegative".into()));
    }
    Ok((4.0 * PI * rcs).sqrt() * lambda_c / (16.0 * PI * PI * d1 * d2))
}

/// Bistatic scatter gain `√(4πc)·λ/(16π² d1 d2)` with a random phase.
pub fn nlos_gain(rcs: f64, d1: f64, d2: f64, lambda_c: f64, rng: &mut impl Rng) -> Result<C64> {
    Ok(cis(uniform_phase(rng)) * nlos_gain_magnitude(rcs, d1, d2, lambda_c)?)
}

/// Complex circularly-symmetric Gaussian sample with variance `var`.
pub fn complex_normal(var: f64, rng: &mut impl Rng) -> C64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re * s, im * s)
}

/// LOS gains of the UE-BS, UE-RIS and RIS-BS links.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathGains {
    pub alpha_l: C64,
    pub alpha_r1: C64,
    pub alpha_r2: C64,
}

impl PathGains {
    pub fn random(config: &ScenarioConfig, state: &LocalizationState, rng: &mut impl Rng) -> Result<Self> {
        let lambda = config.wavelength();
        let p_b = config.bs.position;
        Ok(Self {
            alpha_l: los_gain((p_b - state.p_u).norm(), lambda, rng)?,
            alpha_r1: los_gain((state.p_r - state.p_u).norm(), lambda, rng)?,
            alpha_r2: los_gain((p_b - state.p_r).norm(), lambda, rng)?,
        })
    }

    /// Cascaded RIS gain `α_R = α_R1·α_R2`.
    pub fn alpha_r(&self) -> C64 {
        self.alpha_r1 * self.alpha_r2
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScatterPoint {
    pub position: Vec3,
    /// Radar cross section, m².
    pub rcs: f64,
    pub phase: f64,
}

/// Scatter points for the UE-BS, UE-RIS and RIS-BS channels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MultipathSet {
    pub ue_bs: Vec<ScatterPoint>,
    pub ue_ris: Vec<ScatterPoint>,
    pub ris_bs: Vec<ScatterPoint>,
}

impl MultipathSet {
    pub fn none() -> Self {
        Self::default()
    }

    /// `count` points per channel, uniform in the box `[lo, hi]`.
    pub fn random(count: usize, lo: Vec3, hi: Vec3, rcs: f64, rng: &mut impl Rng) -> Self {
        let draw = |rng: &mut _| -> Vec<ScatterPoint> {
            (0..count)
                .map(|_| {
                    let u = Vec3::from_fn(|i, _| lo[i] + (hi[i] - lo[i]) * Rng::random::<f64>(rng));
                    ScatterPoint {
                        position: u,
                        rcs,
                        phase: uniform_phase(rng),
                    }
                })
                .collect()
        };
        let ue_bs = draw(rng);
        let ue_ris = draw(rng);
        let ris_bs = draw(rng);
        Self {
            ue_bs,
            ue_ris,
            ris_bs,
        }
    }

    pub fn counts(&self) -> [usize; 3] {
        [self.ue_bs.len(), self.ue_ris.len(), self.ris_bs.len()]
    }
}

/// One resolved propagation path of a channel.
#[derive(Debug, Clone)]
struct PathTerm {
    gain: C64,
    /// Delay including clock bias, s. Unused for the UE-RIS link.
    delay: f64,
    a_b: Option<CVector>,
    a_r: Option<CVector>,
}

/// All paths of the three channels; index 0 is always the LOS term.
#[derive(Debug, Clone)]
struct ResolvedPaths {
    ue_bs: Vec<PathTerm>,
    ue_ris: Vec<PathTerm>,
    ris_bs: Vec<PathTerm>,
}

fn resolve_paths(
    config: &ScenarioConfig,
    state: &LocalizationState,
    gains: &PathGains,
    multipath: &MultipathSet,
) -> Result<ResolvedPaths> {
    let f_c = config.f_c;
    let lambda = config.wavelength();
    let bs = &config.bs;
    let ris = state.ris_pose();
    let p_b = bs.position;
    let p_u = state.p_u;
    let p_r = state.p_r;
    let c = SPEED_OF_LIGHT;
    let a_b = |target: &Vec3| -> Result<CVector> {
        Ok(array_response(&config.bs_array, aoa_in_lcs(bs, target)?, f_c))
    };
    let a_r = |target: &Vec3| -> Result<CVector> {
        Ok(array_response(&config.ris_array, aoa_in_lcs(&ris, target)?, f_c))
    };
    let (phi_a, phi_d) = ris_angles(state, &p_b)?;
    let d_ur = (p_r - p_u).norm();

    let mut ue_bs = vec![PathTerm {
        gain: gains.alpha_l,
        delay: (p_b - p_u).norm() / c + state.clock_bias,
        a_b: Some(a_b(&p_u)?),
        a_r: None,
    }];
    for s in &multipath.ue_bs {
        let (d1, d2) = ((s.position - p_u).norm(), (p_b - s.position).norm());
        ue_bs.push(PathTerm {
            gain: cis(s.phase) * nlos_gain_magnitude(s.rcs, d1, d2, lambda)?,
            delay: (d1 + d2) / c + state.clock_bias,
            a_b: Some(a_b(&s.position)?),
            a_r: None,
        });
    }

    let mut ue_ris = vec![PathTerm {
        gain: gains.alpha_r1,
        delay: 0.0,
        a_b: None,
        a_r: Some(array_response(&config.ris_array, phi_a, f_c)),
    }];
    for s in &multipath.ue_ris {
        let (d1, d2) = ((s.position - p_u).norm(), (p_r - s.position).norm());
        ue_ris.push(PathTerm {
            gain: cis(s.phase) * nlos_gain_magnitude(s.rcs, d1, d2, lambda)?,
            delay: 0.0,
            a_b: None,
            a_r: Some(a_r(&s.position)?),
        });
    }

    let mut ris_bs = vec![PathTerm {
        gain: gains.alpha_r2,
        delay: (d_ur + (p_b - p_r).norm()) / c + state.clock_bias,
        a_b: Some(a_b(&p_r)?),
        a_r: Some(array_response(&config.ris_array, phi_d, f_c)),
    }];
    for s in &multipath.ris_bs {
        let (d1, d2) = ((s.position - p_r).norm(), (p_b - s.position).norm());
        ris_bs.push(PathTerm {
            gain: cis(s.phase) * nlos_gain_magnitude(s.rcs, d1, d2, lambda)?,
            delay: (d_ur + d1 + d2) / c + state.clock_bias,
            a_b: Some(a_b(&s.position)?),
            a_r: Some(a_r(&s.position)?),
        });
    }
    Ok(ResolvedPaths {
        ue_bs,
        ue_ris,
        ris_bs,
    })
}

fn delay_phase(delta_f: f64, k: usize, tau: f64) -> C64 {
    cis(-2.0 * PI * k as f64 * delta_f * tau)
}

/// Explicit channels at subcarrier `k`.
#[derive(Debug, Clone)]
pub struct Channels {
    pub h_l: CVector,
    pub h_r1: CVector,
    pub h_r2: CMatrix,
}

pub fn build_channels(
    config: &ScenarioConfig,
    state: &LocalizationState,
    gains: &PathGains,
    multipath: &MultipathSet,
    k: usize,
) -> Result<Channels> {
    let paths = resolve_paths(config, state, gains, multipath)?;
    let df = config.delta_f();
    let nb = config.bs_array.len();
    let nr = config.ris_array.len();
    let mut h_l = CVector::zeros(nb);
    for p in &paths.ue_bs {
        h_l += p.a_b.as_ref().unwrap() * (p.gain * delay_phase(df, k, p.delay));
    }
    let mut h_r1 = CVector::zeros(nr);
    for p in &paths.ue_ris {
        h_r1 += p.a_r.as_ref().unwrap() * p.gain;
    }
    let mut h_r2 = CMatrix::zeros(nb, nr);
    for p in &paths.ris_bs {
        let s = p.gain * delay_phase(df, k, p.delay);
        h_r2 += p.a_b.as_ref().unwrap() * p.a_r.as_ref().unwrap().transpose() * s;
    }
    Ok(Channels { h_l, h_r1, h_r2 })
}

/// `α_R [(a_R(φA) ⊙ a_R(φD))ᵀ γ] e^{-j2πkΔfτ_R} a_B(θ_R)`, the LOS RIS path
/// received at the BS antennas.
#[allow(clippy::too_many_arguments)]
pub fn compact_ris_channel(
    config: &ScenarioConfig,
    alpha_r: C64,
    phi_a: AnglePair,
    phi_d: AnglePair,
    theta_r: AnglePair,
    tau_r: f64,
    gamma_g: &CVector,
    k: usize,
) -> CVector {
    let ar_a = array_response(&config.ris_array, phi_a, config.f_c);
    let ar_d = array_response(&config.ris_array, phi_d, config.f_c);
    let b = ar_a.component_mul(&ar_d);
    let s = (b.transpose() * gamma_g)[(0, 0)];
    array_response(&config.bs_array, theta_r, config.f_c)
        * (alpha_r * s * delay_phase(config.delta_f(), k, tau_r))
}

/// Effective reflection `(Γ⁻¹ − S)⁻¹` for a diagonal profile `gamma_g`.
pub fn mutual_coupling_reflection(gamma_g: &CVector, s: &CMatrix) -> Result<CMatrix> {
    let n = gamma_g.len();
    if s.nrows() != n || s.ncols() != n {
        return Err(Error::InvalidInput("scattering matrix dimension mismatch".into()));
    }
    if gamma_g.iter().any(|g| g.norm() == 0.0) {
        return Err(Error::Singular("reflection profile has a zero entry".into()));
    }
    let mut m = -s.clone();
    for i in 0..n {
        m[(i, i)] += gamma_g[i].inv();
    }
    let sv = crate::linalg::singular_values(&m);
    let (smax, smin) = (sv.max(), sv.min());
    if !(smin > 1e-12 * smax) {
        return Err(Error::Singular("Γ⁻¹ − S is numerically singular".into()));
    }
    m.try_inverse()
        .ok_or_else(|| Error::Singular("Γ⁻¹ − S is not invertible".into()))
}

/// Toy coupling model: `s0·exp(−r/(ℓλ))·exp(−j2πr/λ)` between distinct
/// elements at distance `r`, zero on the diagonal.
pub fn toy_scattering_matrix(array: &ArrayGeometry, lambda: f64, scale: f64, decay_wavelengths: f64) -> CMatrix {
    let n = array.len();
    CMatrix::from_fn(n, n, |i, j| {
        if i == j {
            return C64::new(0.0, 0.0);
        }
        let r = (array.positions[i] - array.positions[j]).norm();
        cis(-2.0 * PI * r / lambda) * (scale * (-r / (decay_wavelengths * lambda)).exp())
    })
}

/// Tone columns `e^{j(ν i + φ)}` with frequencies stratified over
/// `[−half_width, half_width)`, the range a far-field source can occupy.
fn vandermonde_factor(rows: usize, cols: usize, half_width: f64, rng: &mut impl Rng) -> CMatrix {
    let half_width = half_width.min(PI);
    let mut t = CMatrix::zeros(rows, cols);
    for j in 0..cols {
        let nu = -half_width + 2.0 * half_width * (j as f64 + rng.random::<f64>()) / cols as f64;
        let phi = uniform_phase(rng);
        for i in 0..rows {
            t[(i, j)] = cis(nu * i as f64 + phi);
        }
    }
    t
}

/// Independent unit-modulus entries with uniform phases.
fn random_phase_factor(rows: usize, cols: usize, rng: &mut impl Rng) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| cis(uniform_phase(rng)))
}

/// Analog combiner `W = T1 ⊗ T2` (N_B × M).
#[derive(Debug, Clone, PartialEq)]
pub struct Combiner {
    pub t1: CMatrix,
    pub t2: CMatrix,
    pub w: CMatrix,
}

impl Combiner {
    pub fn random(config: &ScenarioConfig, rng: &mut impl Rng) -> Self {
        let (nb1, nb2) = (config.bs_array.n1, config.bs_array.n2);
        let w = 2.0 * PI * config.bs_array.spacing / config.wavelength();
        let t1 = vandermonde_factor(nb1, config.rfc[0], w, rng) / C64::from((nb1 as f64).sqrt());
        let t2 = vandermonde_factor(nb2, config.rfc[1], w, rng) / C64::from((nb2 as f64).sqrt());
        let w = kron(&t1, &t2);
        Self { t1, t2, w }
    }
}

/// RIS profiles `Υ = p·(T3 ⊗ T4)`, one column per transmission.
#[derive(Debug, Clone, PartialEq)]
pub struct RisProfileSet {
    pub upsilon: CMatrix,
    pub amplification: f64,
    pub t3: CMatrix,
    pub t4: CMatrix,
}

/// Structure of the RIS profile factors `T3`, `T4`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProfileDesign {
    /// Independent random phases per element and transmission.
    #[default]
    RandomPhase,
    /// Vandermonde tones over the visible ϑ window (shift-invariant factors).
    Tones,
}

impl RisProfileSet {
    pub fn random(config: &ScenarioConfig, amplification: f64, rng: &mut impl Rng) -> Result<Self> {
        Self::with_design(config, amplification, ProfileDesign::RandomPhase, rng)
    }

    pub fn with_design(
        config: &ScenarioConfig,
        amplification: f64,
        design: ProfileDesign,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let sg = config.sqrt_g()?;
        let (n1, n2) = (config.ris_array.n1, config.ris_array.n2);
        let (t3, t4) = match design {
            ProfileDesign::RandomPhase => (random_phase_factor(n1, sg, rng), random_phase_factor(n2, sg, rng)),
            ProfileDesign::Tones => {
                // ϑ sums two direction cosines
                let w = 4.0 * PI * config.ris_array.spacing / config.wavelength();
                (vandermonde_factor(n1, sg, w, rng), vandermonde_factor(n2, sg, w, rng))
            }
        };
        let upsilon = kron(&t3, &t4) * C64::from(amplification);
        Ok(Self {
            upsilon,
            amplification,
            t3,
            t4,
        })
    }

    pub fn gamma(&self, g: usize) -> CVector {
        self.upsilon.column(g).into_owned()
    }

    pub fn transmissions(&self) -> usize {
        self.upsilon.ncols()
    }
}

/// Incident LOS power per RIS element, `P_T |α_R1|²`.
pub fn incident_power(config: &ScenarioConfig, state: &LocalizationState) -> f64 {
    let g = config.wavelength() / (4.0 * PI * (state.p_r - state.p_u).norm());
    config.p_t * g * g
}

/// Amplification factor implied by the configured RIS supply at `state`.
pub fn scenario_amplification(config: &ScenarioConfig, state: &LocalizationState) -> Result<f64> {
    amplification_factor(
        config.p_r,
        config.ris_array.len(),
        incident_power(config, state),
        config.sigmar_sq,
    )
}

/// Pilot symbols `x_{g,k}` with `|x| = √P_T` and random phases (G × K).
pub fn random_pilots(config: &ScenarioConfig, rng: &mut impl Rng) -> CMatrix {
    let a = config.p_t.sqrt();
    CMatrix::from_fn(config.transmissions, config.subcarriers, |_, _| {
        cis(uniform_phase(rng)) * a
    })
}

/// Pilots, combiner and RIS profiles used for one measurement campaign.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementDesign {
    pub pilots: CMatrix,
    pub combiner: Combiner,
    pub profiles: RisProfileSet,
}

impl MeasurementDesign {
    pub fn with_pilots(&self, pilots: CMatrix) -> Self {
        Self {
            pilots,
            ..self.clone()
        }
    }
}

pub fn generate_pilots_and_profiles(config: &ScenarioConfig, seed: u64) -> Result<MeasurementDesign> {
    generate_design(config, seed, ProfileDesign::default())
}

pub fn generate_design(config: &ScenarioConfig, seed: u64, profile_design: ProfileDesign) -> Result<MeasurementDesign> {
    config.sqrt_g()?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let p = scenario_amplification(config, &config.truth)?;
    let combiner = Combiner::random(config, &mut rng);
    let profiles = RisProfileSet::with_design(config, p, profile_design, &mut rng)?;
    let pilots = random_pilots(config, &mut rng);
    Ok(MeasurementDesign {
        pilots,
        combiner,
        profiles,
    })
}

/// Received samples with the design that produced them.
#[derive(Debug, Clone)]
pub struct ObservationSet {
    /// M × (G·K); column `g·K + k` holds `y_{g,k}`.
    pub y: CMatrix,
    /// Noise-free means in the same layout.
    pub mu: CMatrix,
    pub design: MeasurementDesign,
    pub config: ScenarioConfig,
}

impl ObservationSet {
    pub fn column_index(&self, g: usize, k: usize) -> usize {
        g * self.config.subcarriers + k
    }

    pub fn y_at(&self, g: usize, k: usize) -> CVector {
        self.y.column(self.column_index(g, k)).into_owned()
    }

    pub fn pilot(&self, g: usize, k: usize) -> C64 {
        self.design.pilots[(g, k)]
    }

    pub fn combiner(&self) -> &CMatrix {
        &self.design.combiner.w
    }
}

/// Draw `y_{g,k} = Wᴴ(h_L x + H_R2 Γ̃_g (h_R1 x + n_r) + n_0)` for every
/// transmission and subcarrier. `mc_scattering = None` skips coupling.
pub fn synthesize_observations(
    config: &ScenarioConfig,
    design: &MeasurementDesign,
    state: &LocalizationState,
    gains: &PathGains,
    multipath: &MultipathSet,
    mc_scattering: Option<&CMatrix>,
    seed: u64,
) -> Result<ObservationSet> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let paths = resolve_paths(config, state, gains, multipath)?;
    let w = &design.combiner.w;
    let wh = w.adjoint();
    let (gg, kk) = (config.transmissions, config.subcarriers);
    let m = w.ncols();
    let nb = config.bs_array.len();
    let nr = config.ris_array.len();
    let df = config.delta_f();
    if design.pilots.shape() != (gg, kk) || design.profiles.transmissions() != gg {
        return Err(Error::InvalidInput("design does not match configuration".into()));
    }

    let project = |t: &PathTerm| wh.clone() * t.a_b.as_ref().unwrap();
    let los_beams: Vec<CVector> = paths.ue_bs.iter().map(project).collect();
    let ris_beams: Vec<CVector> = paths.ris_bs.iter().map(project).collect();
    let mut h_r1 = CVector::zeros(nr);
    for p in &paths.ue_ris {
        h_r1 += p.a_r.as_ref().unwrap() * p.gain;
    }

    let mut y = CMatrix::zeros(m, gg * kk);
    let mut mu = CMatrix::zeros(m, gg * kk);
    let mut n0 = CVector::zeros(nb);
    let mut nr_vec = CVector::zeros(nr);
    for g in 0..gg {
        let gamma = design.profiles.gamma(g);
        let refl = match mc_scattering {
            Some(s) => Some(mutual_coupling_reflection(&gamma, s)?),
            None => None,
        };
        let apply = |v: &CVector| -> CVector {
            match &refl {
                Some(r) => r * v,
                None => gamma.component_mul(v),
            }
        };
        let reflected_signal = apply(&h_r1);
        // a_R(φD^i)ᵀ Γ̃ h_R1 per RIS-BS path
        let sig_coef: Vec<C64> = paths
            .ris_bs
            .iter()
            .map(|p| p.a_r.as_ref().unwrap().dot(&reflected_signal))
            .collect();
        for k in 0..kk {
            let x = design.pilots[(g, k)];
            let mut mean = CVector::zeros(m);
            for (p, beam) in paths.ue_bs.iter().zip(&los_beams) {
                mean += beam * (p.gain * delay_phase(df, k, p.delay) * x);
            }
            let phases: Vec<C64> = paths
                .ris_bs
                .iter()
                .map(|p| p.gain * delay_phase(df, k, p.delay))
                .collect();
            for ((ph, beam), sc) in phases.iter().zip(&ris_beams).zip(&sig_coef) {
                mean += beam * (ph * sc * x);
            }
            let mut obs = mean.clone();
            if config.sigmar_sq > 0.0 {
                for v in nr_vec.iter_mut() {
                    *v = complex_normal(config.sigmar_sq, &mut rng);
                }
                let reflected_noise = apply(&nr_vec);
                for ((ph, beam), p) in phases.iter().zip(&ris_beams).zip(&paths.ris_bs) {
                    let c = p.a_r.as_ref().unwrap().dot(&reflected_noise);
                    obs += beam * (ph * c);
                }
            }
            if config.sigma0_sq > 0.0 {
                for v in n0.iter_mut() {
                    *v = complex_normal(config.sigma0_sq, &mut rng);
                }
                obs += &wh * &n0;
            }
            let col = g * kk + k;
            y.set_column(col, &obs);
            mu.set_column(col, &mean);
        }
    }
    Ok(ObservationSet {
        y,
        mu,
        design: design.clone(),
        config: config.clone(),
    })
}

/// `10 log10(Σ‖μ‖² / Σ tr(C))` for a total noise trace.
pub fn snr_db(mu: &CMatrix, noise_trace: f64) -> f64 {
    let signal = mu.norm_squared();
    if noise_trace <= 0.0 {
        return f64::INFINITY;
    }
    if signal == 0.0 {
        return f64::NEG_INFINITY;
    }
    10.0 * (signal / noise_trace).log10()
}

pub fn received_snr(obs: &ObservationSet, noise: &NoiseCovariances) -> f64 {
    snr_db(&obs.mu, noise.total_trace())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::forward_map;

    fn rng(seed: u64) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(seed)
    }

    #[test]
    fn array_response_examples() {
        let g = ArrayGeometry::upa(4, 3, 0.01);
        let a = array_response(&g, AnglePair::new(0.3, -0.2), 28e9);
        assert!((a[0] - C64::new(1.0, 0.0)).norm() < 1e-15);
        assert!(a.iter().all(|v| (v.norm() - 1.0).abs() < 1e-12));
        let b = array_response(&g, AnglePair::new(0.0, 0.0), 28e9);
        assert!(b.iter().all(|v| (v - C64::new(1.0, 0.0)).norm() < 1e-12));
        let d = 0.004;
        let two = ArrayGeometry::upa(2, 1, d);
        let r = array_response(&two, AnglePair::new(PI / 2.0, 0.0), 28e9);
        let expect = 2.0 * PI * 28e9 * d / SPEED_OF_LIGHT;
        assert!((r[1] - cis(expect)).norm() < 1e-12);
    }

    #[test]
    fn array_response_is_kronecker_of_vandermondes() {
        let cfg = ScenarioConfig::nominal();
        let a = AnglePair::new(0.4, -0.3);
        let v = array_response(&cfg.bs_array, a, cfg.f_c);
        let k = 2.0 * PI * cfg.f_c * cfg.bs_array.spacing / SPEED_OF_LIGHT;
        let w1 = k * a.az.sin() * a.el.cos();
        let w2 = k * a.el.sin();
        let kv = crate::linalg::kron_vec(
            &crate::linalg::vandermonde(10, w1),
            &crate::linalg::vandermonde(10, w2),
        );
        assert!((v - kv).norm() < 1e-10);
    }

    #[test]
    fn amplification_examples() {
        assert_eq!(amplification_factor(0.0, 225, 1e-9, 1e-12).unwrap(), 1.0);
        let (n, pin, sr) = (225, 2e-9, 3e-12);
        let pr = 3.0 * n as f64 * (pin + sr);
        assert!((amplification_factor(pr, n, pin, sr).unwrap() - 2.0).abs() < 1e-12);
        assert!(amplification_factor(-1.0, n, pin, sr).is_err());
        let cfg = ScenarioConfig::nominal();
        let pin = incident_power(&cfg, &cfg.truth);
        let p = amplification_factor(cfg.p_r, 225, pin, cfg.sigmar_sq).unwrap();
        let back = ris_supply_power(p, 225, pin, cfg.sigmar_sq);
        assert!((back - cfg.p_r).abs() / cfg.p_r < 1e-9);
        for pr in [0.0, 1e-6, 1e-3, 5e-3] {
            let p = amplification_factor(pr, 225, pin, cfg.sigmar_sq).unwrap();
            let back = ris_supply_power(p, 225, pin, cfg.sigmar_sq);
            assert!((back - pr).abs() <= 1e-9 * pr.max(1e-300));
        }
    }

    #[test]
    fn gain_examples() {
        let lambda = SPEED_OF_LIGHT / 28e9;
        let mut r = rng(3);
        let a = los_gain(lambda / (4.0 * PI), lambda, &mut r).unwrap();
        assert!((a.norm() - 1.0).abs() < 1e-12);
        let a1 = los_gain(2.0, lambda, &mut r).unwrap().norm();
        let a2 = los_gain(4.0, lambda, &mut r).unwrap().norm();
        assert!((a1 / a2 - 2.0).abs() < 1e-12);
        let d = 72f64.sqrt();
        let a = los_gain(d, lambda, &mut r).unwrap();
        assert!((a.norm() - lambda / (4.0 * PI * d)).abs() < 1e-18);
        assert!(los_gain(0.0, lambda, &mut r).is_err());
        assert_eq!(nlos_gain(0.0, 3.0, 4.0, lambda, &mut r).unwrap().norm(), 0.0);
        let m = nlos_gain(0.5, 5.0, 5.0, lambda, &mut r).unwrap().norm();
        let expect = (4.0 * PI * 0.5f64).sqrt() * lambda / (16.0 * PI * PI * 25.0);
        assert!((m - expect).abs() < 1e-18);
        let m2 = nlos_gain(0.5, 10.0, 5.0, lambda, &mut r).unwrap().norm();
        assert!((m / m2 - 2.0).abs() < 1e-12);
        assert!(nlos_gain(0.5, 0.0, 5.0, lambda, &mut r).is_err());
    }

    #[test]
    fn design_structure_and_repeatability() {
        let cfg = ScenarioConfig::nominal();
        let a = generate_pilots_and_profiles(&cfg, 11).unwrap();
        let b = generate_pilots_and_profiles(&cfg, 11).unwrap();
        assert_eq!(a, b);
        let w = kron(&a.combiner.t1, &a.combiner.t2);
        assert!((w - &a.combiner.w).norm() < 1e-12);
        let p = a.profiles.amplification;
        assert!(p > 1.0);
        assert!(a.profiles.upsilon.iter().all(|v| (v.norm() - p).abs() < 1e-12 * p));
        assert!(a.pilots.iter().all(|v| (v.norm() - cfg.p_t.sqrt()).abs() < 1e-12));
        let wh_rows: Vec<f64> = (0..25).map(|i| a.combiner.w.column(i).norm()).collect();
        assert!(wh_rows.iter().all(|n| (n - 1.0).abs() < 1e-12));
    }

    #[test]
    fn build_channels_los_only() {
        let cfg = ScenarioConfig::nominal();
        let gains = PathGains::random(&cfg, &cfg.truth, &mut rng(1)).unwrap();
        let ch = build_channels(&cfg, &cfg.truth, &gains, &MultipathSet::none(), 0).unwrap();
        let eta = forward_map(&cfg.truth, &cfg.bs).unwrap();
        let expect = array_response(&cfg.bs_array, eta.theta_l, cfg.f_c) * gains.alpha_l;
        assert!((ch.h_l - expect).norm() < 1e-14);
        let sv = crate::linalg::singular_values(&ch.h_r2);
        assert!(sv[1] < 1e-12 * sv[0]);
    }

    #[test]
    fn build_channels_with_one_scatter_point() {
        let cfg = ScenarioConfig::nominal();
        let st = cfg.truth;
        let gains = PathGains::random(&cfg, &st, &mut rng(1)).unwrap();
        let mp = MultipathSet::random(1, Vec3::new(-5.0, -5.0, 0.0), Vec3::new(5.0, 5.0, 5.0), 0.5, &mut rng(2));
        let k = 5;
        let ch = build_channels(&cfg, &st, &gains, &mp, k).unwrap();
        let lambda = cfg.wavelength();
        let c = SPEED_OF_LIGHT;
        let df = cfg.delta_f();
        let pb = cfg.bs.position;
        let ph = |tau: f64| cis(-2.0 * PI * k as f64 * df * tau);
        let ab = |t: &Vec3| array_response(&cfg.bs_array, aoa_in_lcs(&cfg.bs, t).unwrap(), cfg.f_c);
        let ar = |t: &Vec3| array_response(&cfg.ris_array, aoa_in_lcs(&st.ris_pose(), t).unwrap(), cfg.f_c);

        let s = mp.ue_bs[0];
        let (d1, d2) = ((s.position - st.p_u).norm(), (pb - s.position).norm());
        let g = cis(s.phase) * (4.0 * PI * s.rcs).sqrt() * lambda / (16.0 * PI * PI * d1 * d2);
        let tau_l = (pb - st.p_u).norm() / c + st.clock_bias;
        let h_l = ab(&st.p_u) * (gains.alpha_l * ph(tau_l)) + ab(&s.position) * (g * ph((d1 + d2) / c + st.clock_bias));
        assert!((&ch.h_l - h_l).norm() < 1e-12 * ch.h_l.norm());

        let s = mp.ue_ris[0];
        let (d1, d2) = ((s.position - st.p_u).norm(), (st.p_r - s.position).norm());
        let g = cis(s.phase) * (4.0 * PI * s.rcs).sqrt() * lambda / (16.0 * PI * PI * d1 * d2);
        let h_r1 = ar(&st.p_u) * gains.alpha_r1 + ar(&s.position) * g;
        assert!((&ch.h_r1 - h_r1).norm() < 1e-12 * ch.h_r1.norm());

        let s = mp.ris_bs[0];
        let (d1, d2) = ((s.position - st.p_r).norm(), (pb - s.position).norm());
        let g = cis(s.phase) * (4.0 * PI * s.rcs).sqrt() * lambda / (16.0 * PI * PI * d1 * d2);
        let dur = (st.p_r - st.p_u).norm();
        let tau_r = (dur + (pb - st.p_r).norm()) / c + st.clock_bias;
        let h_r2 = ab(&st.p_r) * ar(&pb).transpose() * (gains.alpha_r2 * ph(tau_r))
            + ab(&s.position) * ar(&s.position).transpose() * (g * ph((dur + d1 + d2) / c + st.clock_bias));
        assert!((&ch.h_r2 - h_r2).norm() < 1e-12 * ch.h_r2.norm());
    }

    #[test]
    fn compact_form_matches_explicit_product() {
        let cfg = ScenarioConfig::nominal();
        let st = cfg.truth;
        let design = generate_pilots_and_profiles(&cfg, 4).unwrap();
        let gains = PathGains::random(&cfg, &st, &mut rng(9)).unwrap();
        let eta = forward_map(&st, &cfg.bs).unwrap();
        let (pa, pd) = ris_angles(&st, &cfg.bs.position).unwrap();
        for (g, k) in [(0, 0), (3, 7), (8, 31)] {
            let ch = build_channels(&cfg, &st, &gains, &MultipathSet::none(), k).unwrap();
            let gamma = design.profiles.gamma(g);
            let explicit = &ch.h_r2 * gamma.component_mul(&ch.h_r1);
            let compact = compact_ris_channel(&cfg, gains.alpha_r(), pa, pd, eta.theta_r, eta.tau_r, &gamma, k);
            assert!((&explicit - &compact).norm() < 1e-10 * explicit.norm());
            let scaled = compact_ris_channel(&cfg, gains.alpha_r(), pa, pd, eta.theta_r, eta.tau_r, &(gamma * C64::new(0.0, 2.0)), k);
            assert!((scaled - compact * C64::new(0.0, 2.0)).norm() < 1e-12 * explicit.norm());
        }
    }

    #[test]
    fn single_element_compact_channel() {
        let mut cfg = ScenarioConfig::nominal();
        cfg.ris_array = ArrayGeometry::upa(1, 1, 0.001);
        let gamma = CVector::from_element(1, C64::new(0.5, 0.5));
        let ar = C64::new(1e-3, 2e-3);
        let th = AnglePair::new(0.1, 0.2);
        let v = compact_ris_channel(&cfg, ar, th, th, th, 1e-8, &gamma, 2);
        let expect = array_response(&cfg.bs_array, th, cfg.f_c) * (gamma[0] * ar * delay_phase(cfg.delta_f(), 2, 1e-8));
        assert!((v - expect).norm() < 1e-15);
    }

    #[test]
    fn mutual_coupling_examples() {
        let gamma = CVector::from_vec(vec![C64::new(2.0, 0.0), C64::new(0.0, 2.0), C64::new(-2.0, 0.0), C64::new(1.0, 1.0)]);
        let zero = CMatrix::zeros(4, 4);
        let r = mutual_coupling_reflection(&gamma, &zero).unwrap();
        assert!((r - CMatrix::from_diagonal(&gamma)).norm() < 1e-15);
        let one = CVector::from_element(1, C64::new(3.0, 0.0));
        let s = CMatrix::from_element(1, 1, C64::new(0.1, 0.05));
        let r = mutual_coupling_reflection(&one, &s).unwrap();
        assert!((r[(0, 0)] - (C64::new(1.0 / 3.0, 0.0) - s[(0, 0)]).inv()).norm() < 1e-14);
        let mut rr = rng(5);
        let mut s = CMatrix::from_fn(4, 4, |_, _| complex_normal(1.0, &mut rr));
        let norm = crate::linalg::singular_values(&s).max();
        s *= C64::from(0.9 / (2.0 * 2.0f64.sqrt() * norm));
        let r = mutual_coupling_reflection(&gamma, &s).unwrap();
        let mut inv = -s.clone();
        for i in 0..4 {
            inv[(i, i)] += gamma[i].inv();
        }
        assert!((r * inv - CMatrix::identity(4, 4)).norm() < 1e-10);
        let s = CMatrix::from_diagonal(&gamma.map(|g| g.inv()));
        assert!(matches!(mutual_coupling_reflection(&gamma, &s), Err(Error::Singular(_))));
    }

    #[test]
    fn noise_free_observations_equal_means() {
        let cfg = ScenarioConfig::nominal().with_noise_scale(0.0);
        let design = generate_pilots_and_profiles(&cfg, 2).unwrap();
        let gains = PathGains::random(&cfg, &cfg.truth, &mut rng(1)).unwrap();
        let obs = synthesize_observations(&cfg, &design, &cfg.truth, &gains, &MultipathSet::none(), None, 3).unwrap();
        assert_eq!(obs.y, obs.mu);
        let zero = CMatrix::zeros(225, 225);
        let obs2 = synthesize_observations(&cfg, &design, &cfg.truth, &gains, &MultipathSet::none(), Some(&zero), 3).unwrap();
        assert!((obs2.y - &obs.y).norm() < 1e-12 * obs.y.norm());
    }

    #[test]
    fn synthesis_matches_explicit_channels() {
        let cfg = ScenarioConfig::nominal().with_noise_scale(0.0);
        let st = cfg.truth;
        let design = generate_pilots_and_profiles(&cfg, 2).unwrap();
        let gains = PathGains::random(&cfg, &st, &mut rng(1)).unwrap();
        let mp = MultipathSet::random(2, Vec3::new(-5.0, -5.0, 0.0), Vec3::new(5.0, 5.0, 5.0), 0.5, &mut rng(8));
        let obs = synthesize_observations(&cfg, &design, &st, &gains, &mp, None, 3).unwrap();
        for (g, k) in [(0, 0), (4, 13), (8, 31)] {
            let ch = build_channels(&cfg, &st, &gains, &mp, k).unwrap();
            let x = design.pilots[(g, k)];
            let gamma = design.profiles.gamma(g);
            let h = (ch.h_l + &ch.h_r2 * gamma.component_mul(&ch.h_r1)) * x;
            let expect = design.combiner.w.adjoint() * h;
            assert!((obs.y_at(g, k) - &expect).norm() < 1e-10 * expect.norm());
        }
    }

    #[test]
    fn snr_sentinels_and_scaling() {
        let mu = CMatrix::from_element(3, 2, C64::new(1.0, 1.0));
        assert_eq!(snr_db(&CMatrix::zeros(3, 2), 1.0), f64::NEG_INFINITY);
        assert_eq!(snr_db(&mu, 0.0), f64::INFINITY);
        let a = snr_db(&mu, 2.0);
        assert!((a - snr_db(&mu, 4.0) - 10.0 * 2f64.log10()).abs() < 1e-12);
        assert!((snr_db(&(mu * C64::from(10f64.sqrt())), 2.0) - a - 10.0).abs() < 1e-12);
    }
}
