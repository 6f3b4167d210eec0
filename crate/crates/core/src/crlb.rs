//! Fisher information and error bounds for the channel and localization
//! parameters under the colored noise of an active RIS.

use nalgebra::{DMatrix, Matrix3, SMatrix};
use rayon::prelude::*;

use crate::channel::{build_channels, mutual_coupling_reflection, MeasurementDesign, MultipathSet, PathGains};
use crate::error::{Error, Result};
use crate::geometry::{forward_map, rotation_matrix_dz, FullChannelParams, LocalizationState, Pose, Vec3, SPEED_OF_LIGHT};
use crate::linalg::{CMatrix, C64};
use crate::refine::{mean_jacobian, ModelContext};
use crate::scenario::ScenarioConfig;

/// Real/imaginary block form `(σ²/2)[ℜ(AAᴴ), −ℑ(AAᴴ); ℑ(AAᴴ), ℜ(AAᴴ)]`.
pub fn real_block_covariance(a: &CMatrix, sigma_sq: f64) -> DMatrix<f64> {
    complex_to_real_covariance(&(a * a.adjoint() * C64::from(sigma_sq)))
}

/// Real covariance of `[ℜz; ℑz]` for a circular vector with covariance `sigma`.
pub fn complex_to_real_covariance(sigma: &CMatrix) -> DMatrix<f64> {
    let m = sigma.nrows();
    DMatrix::from_fn(2 * m, 2 * m, |i, j| {
        let v = sigma[(i % m, j % m)];
        0.5 * match (i < m, j < m) {
            (true, true) | (false, false) => v.re,
            (true, false) => -v.im,
            (false, true) => v.im,
        }
    })
}

/// Real-form covariances of the combined receiver noise and of the
/// amplified RIS noise for every transmission and subcarrier.
#[derive(Debug, Clone)]
pub struct NoiseCovariances {
    pub c0: DMatrix<f64>,
    /// Indexed by `g·K + k`.
    pub cr: Vec<DMatrix<f64>>,
}

impl NoiseCovariances {
    pub fn total(&self, idx: usize) -> DMatrix<f64> {
        &self.c0 + &self.cr[idx]
    }

    /// `Σ_{g,k} tr(C0 + C_r^{g,k})`.
    pub fn total_trace(&self) -> f64 {
        self.c0.trace() * self.cr.len() as f64 + self.cr.iter().map(|c| c.trace()).sum::<f64>()
    }
}

/// `C0` from `A0 = Wᴴ` and `C_r` from `A_r = Wᴴ H_R2^k Γ_g`.
pub fn noise_covariance(w: &CMatrix, h_r2_k: &CMatrix, gamma_g: &CMatrix, sigma0_sq: f64, sigmar_sq: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let wh = w.adjoint();
    let a_r = &wh * h_r2_k * gamma_g;
    (real_block_covariance(&wh, sigma0_sq), real_block_covariance(&a_r, sigmar_sq))
}

/// `P Γ̃_g`; a column scaling when the RIS is uncoupled.
fn apply_reflection(p: &CMatrix, design: &MeasurementDesign, g: usize, mc: Option<&CMatrix>) -> Result<CMatrix> {
    let gamma = design.profiles.gamma(g);
    match mc {
        Some(s) => Ok(p * mutual_coupling_reflection(&gamma, s)?),
        None => {
            let mut out = p.clone();
            for (j, mut col) in out.column_iter_mut().enumerate() {
                col *= gamma[j];
            }
            Ok(out)
        }
    }
}

pub fn scenario_noise_covariances(
    config: &ScenarioConfig,
    design: &MeasurementDesign,
    state: &LocalizationState,
    gains: &PathGains,
    multipath: &MultipathSet,
    mc: Option<&CMatrix>,
) -> Result<NoiseCovariances> {
    let w = &design.combiner.w;
    let wh = w.adjoint();
    let (gg, kk) = (config.transmissions, config.subcarriers);
    let c0 = real_block_covariance(&wh, config.sigma0_sq);
    let projected: Vec<CMatrix> = (0..kk)
        .map(|k| build_channels(config, state, gains, multipath, k).map(|c| &wh * c.h_r2))
        .collect::<Result<_>>()?;
    let mut cr = Vec::with_capacity(gg * kk);
    for g in 0..gg {
        for p in &projected {
            cr.push(real_block_covariance(&apply_reflection(p, design, g, mc)?, config.sigmar_sq));
        }
    }
    Ok(NoiseCovariances { c0, cr })
}

/// Complex noise covariance `σ0² WᴴW + σr² A_r A_rᴴ` per transmission for
/// the LOS-only model, where `A_r A_rᴴ` does not depend on the subcarrier.
pub fn complex_noise_covariances(
    config: &ScenarioConfig,
    design: &MeasurementDesign,
    state: &LocalizationState,
    gains: &PathGains,
    mc: Option<&CMatrix>,
) -> Result<Vec<CMatrix>> {
    let wh = design.combiner.w.adjoint();
    let base = &wh * &design.combiner.w * C64::from(config.sigma0_sq);
    let h = build_channels(config, state, gains, &MultipathSet::none(), 0)?;
    let p = &wh * h.h_r2;
    (0..config.transmissions)
        .map(|g| {
            let a = apply_reflection(&p, design, g, mc)?;
            Ok(&base + &a * a.adjoint() * C64::from(config.sigmar_sq))
        })
        .collect()
}

/// Labeled real symmetric information matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FimMatrix {
    pub matrix: DMatrix<f64>,
    pub labels: Vec<&'static str>,
}

pub const ETA_CH_LABELS: [&str; 12] = [
    "theta_l_az", "theta_l_el", "theta_r_az", "theta_r_el", "tau_l", "tau_r", "vartheta2", "vartheta3",
    "alpha_l_re", "alpha_l_im", "alpha_r_re", "alpha_r_im",
];

pub const XI_LABELS: [&str; 8] = ["p_u_x", "p_u_y", "p_u_z", "p_r_x", "p_r_y", "p_r_z", "o3", "delta"];

impl FimMatrix {
    pub fn new(matrix: DMatrix<f64>, labels: Vec<&'static str>) -> Result<Self> {
        if matrix.nrows() != labels.len() || matrix.ncols() != labels.len() {
            return Err(Error::InvalidInput("label count does not match FIM size".into()));
        }
        Ok(Self { matrix, labels })
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| *l == label)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            matrix: &self.matrix * s,
            labels: self.labels.clone(),
        }
    }

    /// Largest asymmetry relative to the largest entry.
    pub fn asymmetry(&self) -> f64 {
        let m = &self.matrix;
        let scale = m.amax().max(f64::MIN_POSITIVE);
        (m - m.transpose()).amax() / scale
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let sym = (&self.matrix + self.matrix.transpose()) * 0.5;
        sym.symmetric_eigenvalues().min()
    }
}

/// `J(η_ch) = Σ_{g,k} 2ℜ(∂μᴴ Σ_g⁻¹ ∂μ)` with `noise[g]` the complex
/// covariance of transmission `g`.
pub fn fim_channel(eta_ch: &FullChannelParams, ctx: &ModelContext, noise: &[CMatrix]) -> Result<FimMatrix> {
    let gg = ctx.transmissions();
    let kk = ctx.subcarriers();
    if noise.len() != gg {
        return Err(Error::InvalidInput("one covariance per transmission required".into()));
    }
    let jac = mean_jacobian(&eta_ch.eta, ctx);
    let (al, ar) = (eta_ch.alpha_l, eta_ch.alpha_r);
    let i = C64::new(0.0, 1.0);
    let mut derivs: Vec<CMatrix> = (0..8).map(|j| jac.combined(j, al, ar)).collect();
    derivs.push(jac.means.mu_l.clone());
    derivs.push(&jac.means.mu_l * i);
    derivs.push(jac.means.mu_r.clone());
    derivs.push(&jac.means.mu_r * i);
    let mut fim = DMatrix::<f64>::zeros(12, 12);
    for (g, sigma) in noise.iter().enumerate() {
        let chol = match sigma.clone().cholesky() {
            Some(c) => c,
            None => {
                let ridge = 1e-12 * sigma.trace().re.max(f64::MIN_POSITIVE);
                let m = sigma + CMatrix::identity(sigma.nrows(), sigma.nrows()) * C64::from(ridge);
                log::warn!("noise covariance regularized for transmission {g}");
                m.cholesky()
                    .ok_or_else(|| Error::Singular("noise covariance is not positive definite".into()))?
            }
        };
        let l = chol.l();
        let white: Vec<CMatrix> = derivs
            .iter()
            .map(|d| {
                let block = d.columns(g * kk, kk).into_owned();
                l.solve_lower_triangular(&block).expect("triangular factor is nonsingular")
            })
            .collect();
        for a in 0..12 {
            for b in a..12 {
                let v = 2.0 * white[a].dotc(&white[b]).re;
                fim[(a, b)] += v;
                if a != b {
                    fim[(b, a)] += v;
                }
            }
        }
    }
    FimMatrix::new(fim, ETA_CH_LABELS.to_vec())
}

/// Same information as [`fim_channel`] through the real-valued route
/// `Σ Dᵀ C⁻¹ D` with stacked real/imaginary derivatives.
pub fn fim_channel_real(eta_ch: &FullChannelParams, ctx: &ModelContext, noise: &NoiseCovariances) -> Result<FimMatrix> {
    let gg = ctx.transmissions();
    let kk = ctx.subcarriers();
    let m = ctx.ports();
    if noise.cr.len() != gg * kk {
        return Err(Error::InvalidInput("covariance count mismatch".into()));
    }
    let jac = mean_jacobian(&eta_ch.eta, ctx);
    let (al, ar) = (eta_ch.alpha_l, eta_ch.alpha_r);
    let i = C64::new(0.0, 1.0);
    let mut derivs: Vec<CMatrix> = (0..8).map(|j| jac.combined(j, al, ar)).collect();
    derivs.push(jac.means.mu_l.clone());
    derivs.push(&jac.means.mu_l * i);
    derivs.push(jac.means.mu_r.clone());
    derivs.push(&jac.means.mu_r * i);
    let mut fim = DMatrix::<f64>::zeros(12, 12);
    for col in 0..gg * kk {
        let d = DMatrix::<f64>::from_fn(2 * m, 12, |r, p| {
            let v = derivs[p][(r % m, col)];
            if r < m {
                v.re
            } else {
                v.im
            }
        });
        let c = noise.total(col);
        let cinv = c
            .try_inverse()
            .ok_or_else(|| Error::Singular("noise covariance is singular".into()))?;
        fim += d.transpose() * cinv * &d;
    }
    FimMatrix::new(fim, ETA_CH_LABELS.to_vec())
}

/// Equivalent FIM of η by Schur complement over the four gain coordinates.
pub fn efim_localization_channel(j: &FimMatrix) -> Result<FimMatrix> {
    let n = j.matrix.nrows();
    if n != 12 {
        return Err(Error::InvalidInput("expected a 12 × 12 channel FIM".into()));
    }
    let x = j.matrix.view((0, 0), (8, 8));
    let y = j.matrix.view((0, 8), (8, 4));
    let z = j.matrix.view((8, 8), (4, 4)).into_owned();
    let zinv = z
        .try_inverse()
        .ok_or_else(|| Error::Singular("gain block of the FIM is singular".into()))?;
    let schur = x - y * zinv * y.transpose();
    FimMatrix::new(schur, ETA_CH_LABELS[..8].to_vec())
}

fn angle_gradient(v: &Vec3) -> (Vec3, Vec3) {
    let rho2 = v[0] * v[0] + v[1] * v[1];
    let rho = rho2.sqrt();
    let n2 = v.norm_squared();
    let d_az = Vec3::new(-v[1] / rho2, v[0] / rho2, 0.0);
    let d_el = Vec3::new(-v[0] * v[2] / (n2 * rho), -v[1] * v[2] / (n2 * rho), rho2 / (n2 * rho));
    (d_az, d_el)
}

/// Analytic Jacobian `∂η/∂ξ` (8 × 8; delays in seconds).
pub fn eta_xi_jacobian(xi: &LocalizationState, bs: &Pose) -> Result<SMatrix<f64, 8, 8>> {
    let c = SPEED_OF_LIGHT;
    let p_b = bs.position;
    let (p_u, p_r) = (xi.p_u, xi.p_r);
    let rb_t = bs.rotation().transpose();
    let ris = xi.ris_pose();
    let rr = ris.rotation();
    let vl = rb_t * (p_u - p_b);
    let vr = rb_t * (p_r - p_b);
    if vl.norm() < 1e-9 || vr.norm() < 1e-9 {
        return Err(Error::DegenerateGeometry("coincident device positions".into()));
    }
    if vl.xy().norm() < 1e-12 || vr.xy().norm() < 1e-12 {
        return Err(Error::DegenerateGeometry("azimuth undefined on the array normal axis".into()));
    }
    let mut t = SMatrix::<f64, 8, 8>::zeros();
    let set_row3 = |t: &mut SMatrix<f64, 8, 8>, row: usize, col: usize, v: &Vec3| {
        for i in 0..3 {
            t[(row, col + i)] = v[i];
        }
    };
    let (gl_az, gl_el) = angle_gradient(&vl);
    set_row3(&mut t, 0, 0, &(rb_t.transpose() * gl_az));
    set_row3(&mut t, 1, 0, &(rb_t.transpose() * gl_el));
    let (gr_az, gr_el) = angle_gradient(&vr);
    set_row3(&mut t, 2, 3, &(rb_t.transpose() * gr_az));
    set_row3(&mut t, 3, 3, &(rb_t.transpose() * gr_el));

    let d_ub = (p_u - p_b).norm();
    let d_ur = (p_r - p_u).norm();
    let d_rb = (p_r - p_b).norm();
    set_row3(&mut t, 4, 0, &((p_u - p_b) / (c * d_ub)));
    set_row3(&mut t, 5, 0, &(-(p_r - p_u) / (c * d_ur)));
    set_row3(&mut t, 5, 3, &((p_r - p_u) / (c * d_ur) + (p_r - p_b) / (c * d_rb)));
    t[(4, 7)] = 1.0;
    t[(5, 7)] = 1.0;

    // ϑ2, ϑ3 are the local y/z components of u_A + u_D
    let u_a = (p_u - p_r) / d_ur;
    let u_d = (p_b - p_r) / d_rb;
    let proj = |u: &Vec3, d: f64| (Matrix3::identity() - u * u.transpose()) / d;
    let pa = proj(&u_a, d_ur);
    let pd = proj(&u_d, d_rb);
    let rr_t = rr.transpose();
    let d_pu = rr_t * pa;
    let d_pr = -(rr_t * (pa + pd));
    let drz = rotation_matrix_dz(&ris.euler).transpose() * (u_a + u_d);
    for (row, axis) in [(6, 1), (7, 2)] {
        for i in 0..3 {
            t[(row, i)] = d_pu[(axis, i)];
            t[(row, 3 + i)] = d_pr[(axis, i)];
        }
        t[(row, 6)] = drz[axis];
    }
    Ok(t)
}

/// `J(ξ) = Tᵀ J(η) T`.
pub fn fim_localization(j_eta: &FimMatrix, xi: &LocalizationState, bs: &Pose) -> Result<FimMatrix> {
    fim_with_priors(j_eta, xi, bs, &[])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KnownParam {
    O3,
    Delta,
}

/// Chain rule with the columns of known parameters removed from `T`.
pub fn fim_with_priors(j_eta: &FimMatrix, xi: &LocalizationState, bs: &Pose, known: &[KnownParam]) -> Result<FimMatrix> {
    if j_eta.matrix.nrows() != 8 {
        return Err(Error::InvalidInput("expected an 8 × 8 FIM of η".into()));
    }
    let t = eta_xi_jacobian(xi, bs)?;
    let keep: Vec<usize> = (0..8)
        .filter(|&i| !(i == 6 && known.contains(&KnownParam::O3)) && !(i == 7 && known.contains(&KnownParam::Delta)))
        .collect();
    let tk = DMatrix::<f64>::from_fn(8, keep.len(), |r, c| t[(r, keep[c])]);
    let m = tk.transpose() * &j_eta.matrix * &tk;
    FimMatrix::new(m, keep.iter().map(|&i| XI_LABELS[i]).collect())
}

/// Sum of per-BS localization FIMs over a shared parameterization.
pub fn fim_multi_bs(per_bs: &[FimMatrix]) -> Result<FimMatrix> {
    let first = per_bs
        .first()
        .ok_or_else(|| Error::InvalidInput("no base stations given".into()))?;
    let mut sum = first.matrix.clone();
    for f in &per_bs[1..] {
        if f.labels != first.labels {
            return Err(Error::InvalidInput("FIM axis labels differ".into()));
        }
        sum += &f.matrix;
    }
    FimMatrix::new(sum, first.labels.clone())
}

/// `√tr([J⁻¹]_{S,S})` over the selected axes; `+∞` for near-singular `J`.
pub fn error_bound(j: &FimMatrix, selection: &[&str]) -> Result<f64> {
    let idx: Vec<usize> = selection
        .iter()
        .map(|s| {
            j.index_of(s)
                .ok_or_else(|| Error::InvalidInput(format!("FIM has no axis `{s}`")))
        })
        .collect::<Result<_>>()?;
    let sym = (&j.matrix + j.matrix.transpose()) * 0.5;
    // equilibrate before judging conditioning so unit choices do not matter
    let d: Vec<f64> = (0..sym.nrows()).map(|i| sym[(i, i)].max(0.0).sqrt()).collect();
    if d.iter().any(|&v| v == 0.0 || !v.is_finite()) {
        return Ok(f64::INFINITY);
    }
    let scaled = DMatrix::from_fn(sym.nrows(), sym.ncols(), |a, b| sym[(a, b)] / (d[a] * d[b]));
    let eig = scaled.clone().symmetric_eigenvalues();
    let (emin, emax) = (eig.min(), eig.max());
    if !(emin > 0.0) || emax / emin > 1e14 {
        return Ok(f64::INFINITY);
    }
    let inv = match scaled.cholesky() {
        Some(c) => c.inverse(),
        None => return Ok(f64::INFINITY),
    };
    let tr: f64 = idx.iter().map(|&i| inv[(i, i)] / (d[i] * d[i])).sum();
    Ok(tr.max(0.0).sqrt())
}

/// Position, orientation and clock-bias bounds from a localization FIM.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalizationBounds {
    /// m
    pub p_u: f64,
    /// m
    pub p_r: f64,
    /// rad; NaN when o3 is known
    pub o3: f64,
    /// s; NaN when Δ is known
    pub delta: f64,
}

pub fn localization_bounds(j: &FimMatrix) -> Result<LocalizationBounds> {
    let opt = |l: &str| -> Result<f64> {
        if j.index_of(l).is_some() {
            error_bound(j, &[l])
        } else {
            Ok(f64::NAN)
        }
    };
    Ok(LocalizationBounds {
        p_u: error_bound(j, &["p_u_x", "p_u_y", "p_u_z"])?,
        p_r: error_bound(j, &["p_r_x", "p_r_y", "p_r_z"])?,
        o3: opt("o3")?,
        delta: opt("delta")?,
    })
}

/// Channel-parameter bounds from `J(η)` (delays in seconds).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelBounds {
    pub theta_l: f64,
    pub theta_r: f64,
    pub tau_l: f64,
    pub tau_r: f64,
    pub vartheta: f64,
}

pub fn channel_bounds(j: &FimMatrix) -> Result<ChannelBounds> {
    Ok(ChannelBounds {
        theta_l: error_bound(j, &["theta_l_az", "theta_l_el"])?,
        theta_r: error_bound(j, &["theta_r_az", "theta_r_el"])?,
        tau_l: error_bound(j, &["tau_l"])?,
        tau_r: error_bound(j, &["tau_r"])?,
        vartheta: error_bound(j, &["vartheta2", "vartheta3"])?,
    })
}

/// Channel FIM, its Schur-reduced form and the localization FIM for one
/// scenario realization.
#[derive(Debug, Clone)]
pub struct ScenarioFims {
    pub channel: FimMatrix,
    pub eta: FimMatrix,
    pub xi: FimMatrix,
}

pub fn scenario_fims(
    config: &ScenarioConfig,
    design: &MeasurementDesign,
    state: &LocalizationState,
    gains: &PathGains,
    mc: Option<&CMatrix>,
) -> Result<ScenarioFims> {
    let eta = forward_map(state, &config.bs)?;
    let eta_ch = FullChannelParams {
        eta,
        alpha_l: gains.alpha_l,
        alpha_r: gains.alpha_r(),
    };
    let ctx = ModelContext::new(config, design);
    let noise = complex_noise_covariances(config, design, state, gains, mc)?;
    let channel = fim_channel(&eta_ch, &ctx, &noise)?;
    let eta_fim = efim_localization_channel(&channel)?;
    let xi = fim_localization(&eta_fim, state, &config.bs)?;
    Ok(ScenarioFims {
        channel,
        eta: eta_fim,
        xi,
    })
}

/// Localization FIMs for many states in parallel; failures become `None`.
pub fn par_map_states<T: Send>(states: &[LocalizationState], f: impl Fn(&LocalizationState) -> Result<T> + Sync) -> Vec<Option<T>> {
    states.par_iter().map(|s| f(s).ok()).collect()
}
