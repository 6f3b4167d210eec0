//! Element-space and beamspace ESPRIT, and the tensor-ESPRIT coarse
//! channel-parameter estimator.
//!
//! Frequency conventions (identical in element space and beamspace): a
//! harmonic `[1, e^{jω}, …]` yields a Θ eigenvalue `e^{jω}`.
//! - delays: `ω_τ = −2πΔf·τ`
//! - BS angles: `ω1 = κ_B sin(az)cos(el)`, `ω2 = κ_B sin(el)` with `κ_B = 2π f_c d_B / c`
//! - RIS intermediate angles: `ω_ϑ = κ_R ϑ` with `κ_R = 2π f_c d_R / c`

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::channel::ObservationSet;
use crate::error::{Error, Result};
use crate::geometry::{AnglePair, ChannelParams, SPEED_OF_LIGHT};
use crate::linalg::{complement_projector, dominant_singular_pair, eigenvalues, pinv_full_rank, vandermonde, CMatrix, CVector, C64};
use crate::tensor::{cp_decompose, ComplexTensor3, CpOptions};

/// Selection matrices `J1 = [I, 0]`, `J2 = [0, I]` of size `(I−1) × I`.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionPair {
    pub j1: DMatrix<f64>,
    pub j2: DMatrix<f64>,
}

impl SelectionPair {
    pub fn new(i: usize) -> Result<Self> {
        if i < 2 {
            return Err(Error::InvalidInput("selection needs at least 2 rows".into()));
        }
        let j1 = DMatrix::from_fn(i - 1, i, |r, c| (r == c) as u8 as f64);
        let j2 = DMatrix::from_fn(i - 1, i, |r, c| (r + 1 == c) as u8 as f64);
        Ok(Self { j1, j2 })
    }

    fn first(&self, u: &CMatrix) -> CMatrix {
        u.rows(0, u.nrows() - 1).into_owned()
    }

    fn last(&self, u: &CMatrix) -> CMatrix {
        u.rows(1, u.nrows() - 1).into_owned()
    }
}

/// `Θ = (J1 U)⁺ J2 U`.
pub fn element_space_theta(u: &CMatrix, sel: &SelectionPair) -> Result<CMatrix> {
    if sel.j1.ncols() != u.nrows() {
        return Err(Error::InvalidInput("selection size does not match subspace".into()));
    }
    if u.nrows() < u.ncols() + 1 {
        return Err(Error::InvalidInput("need at least R+1 rows".into()));
    }
    let p = pinv_full_rank(&sel.first(u), "J1·U")?;
    Ok(p * sel.last(u))
}

/// Shift-invariance restoration data for a transformation `T` (I × J).
#[derive(Debug, Clone, PartialEq)]
pub struct BeamspaceRestore {
    pub q: CMatrix,
    pub f: CMatrix,
}

/// `F = (J2 T)⁺ J1 T`; `Q` projects onto the complement of
/// `span{t_I, Fᴴ t_1}` where `t_i` is the conjugated i-th row of `T`.
pub fn beamspace_restore(t: &CMatrix) -> Result<BeamspaceRestore> {
    let (i, j) = t.shape();
    if j < 2 {
        return Err(Error::InvalidInput("beamspace dimension must exceed the path count".into()));
    }
    if i < 2 {
        return Err(Error::InvalidInput("transformation needs at least 2 rows".into()));
    }
    let j1t = t.rows(0, i - 1).into_owned();
    let j2t = t.rows(1, i - 1).into_owned();
    let svd = crate::linalg::svd(&j2t, true, true);
    let smax = svd.singular_values.max();
    let tol = smax * 1e-10 * (i.max(j) as f64);
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if smax == 0.0 || rank < j.min(i - 1) {
        return Err(Error::Singular(format!("J2·T has rank {rank}")));
    }
    let pinv = svd
        .pseudo_inverse(tol)
        .map_err(|e| Error::Singular(e.to_string()))?;
    let f = pinv * j1t;
    let t_first = t.row(0).adjoint();
    let t_last = t.row(i - 1).adjoint();
    let q = complement_projector(j, &[t_last, f.adjoint() * t_first]);
    Ok(BeamspaceRestore { q, f })
}

/// `Θ = (Q U)⁺ Q Fᴴ U`.
pub fn beamspace_theta(u: &CMatrix, restore: &BeamspaceRestore) -> Result<CMatrix> {
    if u.nrows() != restore.q.nrows() {
        return Err(Error::InvalidInput("subspace size does not match transformation".into()));
    }
    let qu = &restore.q * u;
    let p = pinv_full_rank(&qu, "Q·U")?;
    Ok(p * &restore.q * restore.f.adjoint() * u)
}

/// Relative residual `‖J1 T − J2 T F‖ / ‖J1 T‖`; zero for tone factors.
pub fn shift_invariance_defect(t: &CMatrix) -> f64 {
    let i = t.nrows();
    if i < 2 {
        return f64::INFINITY;
    }
    let Ok(r) = beamspace_restore(t) else {
        return f64::INFINITY;
    };
    let j1t = t.rows(0, i - 1).into_owned();
    let j2t = t.rows(1, i - 1).into_owned();
    let n = j1t.norm();
    if n == 0.0 {
        return f64::INFINITY;
    }
    (&j1t - j2t * &r.f).norm() / n
}

/// Single-harmonic frequency of `u ∝ Tᴴ a(ω)` by maximising the normalised
/// correlation `|⟨Tᴴa(ω), u⟩|² / ‖Tᴴa(ω)‖²` over `[−w_max, w_max]`.
pub fn beamspace_search(u: &CVector, t: &CMatrix, w_max: f64) -> Result<f64> {
    if u.len() != t.ncols() {
        return Err(Error::InvalidInput("subspace size does not match transformation".into()));
    }
    if u.norm() == 0.0 {
        return Err(Error::Singular("zero beamspace vector".into()));
    }
    let w_max = w_max.min(PI);
    let th = t.adjoint();
    let n = t.nrows();
    let score = |w: f64| {
        let b = &th * vandermonde(n, w);
        let d = b.norm_squared();
        if d == 0.0 {
            0.0
        } else {
            b.dotc(u).norm_sqr() / d
        }
    };
    // dS/dω, whose sign change brackets the peak to full precision
    let slope = |w: f64| {
        let a = vandermonde(n, w);
        let da = CVector::from_fn(n, |i, _| a[i] * C64::new(0.0, i as f64));
        let (b, db) = (&th * a, &th * da);
        let (c, dc) = (b.dotc(u), db.dotc(u));
        let (d, dd) = (b.norm_squared(), 2.0 * b.dotc(&db).re);
        if d == 0.0 {
            0.0
        } else {
            (2.0 * (c.conj() * dc).re * d - c.norm_sqr() * dd) / (d * d)
        }
    };
    const GRID: usize = 2048;
    let step = 2.0 * w_max / GRID as f64;
    let (mut best_w, mut best_s) = (-w_max, f64::NEG_INFINITY);
    for i in 0..=GRID {
        let w = -w_max + i as f64 * step;
        let s = score(w);
        if s > best_s {
            best_s = s;
            best_w = w;
        }
    }
    let (mut lo, mut hi) = ((best_w - step).max(-w_max), (best_w + step).min(w_max));
    if slope(lo) <= 0.0 || slope(hi) >= 0.0 {
        // peak at the window edge
        return Ok(best_w);
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if slope(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Frequency of a rank-1 beamspace vector: beamspace ESPRIT when `T` is
/// shift-invariant, otherwise [`beamspace_search`].
pub fn beamspace_frequency(u: &CVector, t: &CMatrix, w_max: f64) -> Result<f64> {
    if shift_invariance_defect(t) < 1e-9 {
        let u_mat = CMatrix::from_column_slice(u.len(), 1, u.as_slice());
        Ok(eigen_phases(&beamspace_theta(&u_mat, &beamspace_restore(t)?)?)?[0])
    } else {
        beamspace_search(u, t, w_max)
    }
}

fn eigen_phases(theta: &CMatrix) -> Result<Vec<f64>> {
    Ok(eigenvalues(theta)?.iter().map(|e| e.arg()).collect())
}

/// `κ = 2π f_c d / c` for an array spacing `d`.
pub fn spatial_scale(f_c: f64, spacing: f64) -> f64 {
    2.0 * PI * f_c * spacing / SPEED_OF_LIGHT
}

/// Spatial frequencies `(ω1, ω2)` of an angle pair.
pub fn spatial_frequencies(a: AnglePair, kappa: f64) -> (f64, f64) {
    (kappa * a.az.sin() * a.el.cos(), kappa * a.el.sin())
}

/// Inverse of [`spatial_frequencies`] with azimuth restricted to the front half-space.
pub fn angles_from_frequencies(w1: f64, w2: f64, kappa: f64) -> AnglePair {
    let el = (w2 / kappa).clamp(-1.0, 1.0).asin();
    let cel = el.cos();
    let az = if cel > 0.0 {
        (w1 / (kappa * cel)).clamp(-1.0, 1.0).asin()
    } else {
        0.0
    };
    AnglePair { az, el }
}

pub fn delay_frequency(tau: f64, delta_f: f64) -> f64 {
    -2.0 * PI * delta_f * tau
}

/// Delay in `[0, 1/Δf)` from an eigenphase in `(−π, π]`.
pub fn delay_from_phase(phase: f64, delta_f: f64) -> f64 {
    let w = if phase > 0.0 { phase - 2.0 * PI } else { phase };
    let tau = -w / (2.0 * PI * delta_f);
    if tau >= 1.0 / delta_f {
        0.0
    } else {
        tau
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoarseDiagnostics {
    pub cp_residual: f64,
    pub cp_converged: bool,
    /// Pairing residuals for (mode-2 swapped, mode-3 swapped) in order
    /// `[(no, no), (no, yes), (yes, no), (yes, yes)]`.
    pub pairing_residuals: [f64; 4],
    pub pairing_choice: usize,
    /// Best over second-best pairing residual; small values are unambiguous.
    pub pairing_ratio: f64,
    /// `false` when the RIS path could not be separated from the LOS path.
    pub ris_reliable: bool,
    /// Second over first singular value of the RIS gain matrix.
    pub s_rank_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoarseEstimate {
    pub eta_hat: ChannelParams,
    pub alpha_l_hat: C64,
    pub alpha_r_hat: C64,
    /// Per-transmission RIS path gains `β_{R,g} = α_R b(ϑ)ᵀ γ_g`.
    pub beta_r: CVector,
    pub diagnostics: CoarseDiagnostics,
}

/// Beamspace channel estimates summed over transmissions, arranged as a
/// `K × N1 × N2` tensor.
pub fn summed_channel_tensor(obs: &ObservationSet) -> ComplexTensor3 {
    let cfg = &obs.config;
    let (kk, n1, n2) = (cfg.subcarriers, cfg.rfc[0], cfg.rfc[1]);
    let mut t = ComplexTensor3::zeros([kk, n1, n2]);
    for g in 0..cfg.transmissions {
        for k in 0..kk {
            let x = obs.pilot(g, k);
            let s = x.conj() / cfg.p_t;
            let col = obs.y.column(obs.column_index(g, k));
            for a in 0..n1 {
                for b in 0..n2 {
                    let v = t.get(k, a, b) + col[a * n2 + b] * s;
                    t.set(k, a, b, v);
                }
            }
        }
    }
    t
}

/// Per-transmission beamspace channel estimates as a `K × N1 × (N2·G)`
/// tensor; mode-3 index `b·G + g`.
pub fn stacked_channel_tensor(obs: &ObservationSet) -> ComplexTensor3 {
    let cfg = &obs.config;
    let (kk, n1, n2, gg) = (cfg.subcarriers, cfg.rfc[0], cfg.rfc[1], cfg.transmissions);
    let mut t = ComplexTensor3::zeros([kk, n1, n2 * gg]);
    for g in 0..gg {
        for k in 0..kk {
            let s = obs.pilot(g, k).conj() / cfg.p_t;
            let col = obs.y.column(obs.column_index(g, k));
            for a in 0..n1 {
                for b in 0..n2 {
                    t.set(k, a, b * gg + g, col[a * n2 + b] * s);
                }
            }
        }
    }
    t
}

/// How transmissions enter the channel tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TensorLayout {
    /// Channel estimates summed over transmissions (`K × N1 × N2`).
    Summed,
    /// Transmissions kept as a factor of the third mode (`K × N1 × N2·G`);
    /// the RIS component keeps its energy when its gains cancel in the sum.
    #[default]
    Stacked,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CoarseOptions {
    pub cp: CpOptions,
    pub layout: TensorLayout,
}

/// Dominant `N2` factor of each stacked mode-3 column `d ⊗ β`.
fn unstack_mode3(u3: &CMatrix, n2: usize, gg: usize) -> CMatrix {
    let cols: Vec<CVector> = (0..u3.ncols())
        .map(|r| {
            let m = CMatrix::from_fn(n2, gg, |b, g| u3[(b * gg + g, r)]);
            let (s, u, _) = dominant_singular_pair(&m);
            u * C64::from(s)
        })
        .collect();
    CMatrix::from_columns(&cols)
}

struct BsComponent {
    w_tau: f64,
    w1: f64,
    w2: f64,
}

fn mode_vectors(obs: &ObservationSet, c: &BsComponent) -> (CVector, CVector, CVector) {
    let cfg = &obs.config;
    let comb = &obs.design.combiner;
    let a = vandermonde(cfg.subcarriers, c.w_tau);
    let b = comb.t1.adjoint() * vandermonde(cfg.bs_array.n1, c.w1);
    let d = comb.t2.adjoint() * vandermonde(cfg.bs_array.n2, c.w2);
    (a, b, d)
}

fn ls_residual(cols: &[CVector], target: &CVector) -> (f64, CVector) {
    let n = target.len();
    let m = CMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
    let svd = crate::linalg::svd(&m, true, true);
    let smax = svd.singular_values.max();
    let pinv = match svd.pseudo_inverse(smax * 1e-12) {
        Ok(p) => p,
        Err(_) => return (target.norm(), CVector::zeros(cols.len())),
    };
    let coef = pinv * target;
    ((target - m * &coef).norm(), coef)
}

fn tensor_vector(obs: &ObservationSet, comps: &[BsComponent]) -> Vec<CVector> {
    comps
        .iter()
        .map(|c| {
            let (a, b, d) = mode_vectors(obs, c);
            let t = ComplexTensor3::from_fn([a.len(), b.len(), d.len()], |i, j, k| a[i] * b[j] * d[k]);
            CVector::from_column_slice(t.data())
        })
        .collect()
}

/// Tensor-ESPRIT coarse estimate of all eight channel parameters.
pub fn coarse_estimate(obs: &ObservationSet) -> Result<CoarseEstimate> {
    coarse_estimate_with(obs, &CoarseOptions::default())
}

pub fn coarse_estimate_with(obs: &ObservationSet, opts: &CoarseOptions) -> Result<CoarseEstimate> {
    let cfg = &obs.config;
    let df = cfg.delta_f();
    let kappa_b = spatial_scale(cfg.f_c, cfg.bs_array.spacing);
    let kappa_r = spatial_scale(cfg.f_c, cfg.ris_array.spacing);
    let comb = &obs.design.combiner;
    let h = summed_channel_tensor(obs);
    let target = CVector::from_column_slice(h.data());
    if h.norm() == 0.0 {
        return Err(Error::Singular("observations carry no signal".into()));
    }

    let work = match opts.layout {
        TensorLayout::Summed => h.clone(),
        TensorLayout::Stacked => stacked_channel_tensor(obs),
    };
    let sv = crate::linalg::singular_values(&work.unfold(1)?);
    let mut svs: Vec<f64> = sv.iter().copied().collect();
    svs.sort_by(|a, b| b.total_cmp(a));
    let rank = if svs.len() > 1 && svs[1] > 1e-9 * svs[0] { 2 } else { 1 };

    let mut cp = cp_decompose(&work, rank, &opts.cp)?;
    if opts.layout == TensorLayout::Stacked {
        cp.u3 = unstack_mode3(&cp.u3, cfg.rfc[1], cfg.transmissions);
    }
    let sel = SelectionPair::new(cfg.subcarriers)?;
    let tau_ph = eigen_phases(&element_space_theta(&cp.u1, &sel)?)?;
    let r1 = beamspace_restore(&comb.t1)?;
    let r2 = beamspace_restore(&comb.t2)?;
    let w1 = eigen_phases(&beamspace_theta(&cp.u2, &r1)?)?;
    let w2 = eigen_phases(&beamspace_theta(&cp.u3, &r2)?)?;
    let w_tau: Vec<f64> = tau_ph
        .iter()
        .map(|&p| delay_frequency(delay_from_phase(p, df), df))
        .collect();

    let perms: [[usize; 2]; 2] = [[0, 1], [1, 0]];
    let mut pairing_residuals = [f64::INFINITY; 4];
    let mut best: Option<(usize, Vec<BsComponent>)> = None;
    let combos: &[(usize, usize)] = if rank == 2 { &[(0, 0), (0, 1), (1, 0), (1, 1)] } else { &[(0, 0)] };
    for &(p2, p3) in combos {
        let comps: Vec<BsComponent> = (0..rank)
            .map(|r| BsComponent {
                w_tau: w_tau[r],
                w1: w1[perms[p2][r]],
                w2: w2[perms[p3][r]],
            })
            .collect();
        let (res, _) = ls_residual(&tensor_vector(obs, &comps), &target);
        let idx = 2 * p2 + p3;
        pairing_residuals[idx] = res;
        if best.as_ref().is_none_or(|(b, _)| res < pairing_residuals[*b]) {
            best = Some((idx, comps));
        }
    }
    let (choice, mut comps) = best.expect("at least one pairing");
    let mut sorted: Vec<f64> = pairing_residuals.iter().copied().filter(|r| r.is_finite()).collect();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let pairing_ratio = if sorted.len() > 1 && sorted[1] > 0.0 { sorted[0] / sorted[1] } else { 0.0 };

    comps.sort_by(|a, b| delay_from_phase(a.w_tau, df).total_cmp(&delay_from_phase(b.w_tau, df)));
    let ris_reliable = rank == 2;
    let los = &comps[0];
    let theta_l = angles_from_frequencies(los.w1, los.w2, kappa_b);
    let tau_l = delay_from_phase(los.w_tau, df);

    // per-transmission LS for α_L and β_{R,g}
    let gg = cfg.transmissions;
    let kk = cfg.subcarriers;
    let m = cfg.ports();
    let wh = comb.w.adjoint();
    let beam = |c: &BsComponent| -> CVector {
        let a = angles_from_frequencies(c.w1, c.w2, kappa_b);
        &wh * crate::channel::array_response(&cfg.bs_array, a, cfg.f_c)
    };
    let columns: Vec<CVector> = comps
        .iter()
        .map(|c| {
            let bm = beam(c);
            let ph = vandermonde(kk, c.w_tau);
            CVector::from_fn(kk * m, |i, _| ph[i / m] * bm[i % m])
        })
        .collect();
    let mut alpha_sum = C64::new(0.0, 0.0);
    let mut beta_r = CVector::zeros(gg);
    for g in 0..gg {
        let hv = CVector::from_fn(kk * m, |i, _| {
            let k = i / m;
            obs.y[(i % m, obs.column_index(g, k))] * obs.pilot(g, k).conj() / cfg.p_t
        });
        let (_, coef) = ls_residual(&columns, &hv);
        alpha_sum += coef[0];
        if ris_reliable {
            beta_r[g] = coef[1];
        }
    }
    let alpha_l_hat = alpha_sum / gg as f64;

    let mut eta = ChannelParams {
        theta_l,
        tau_l,
        ..Default::default()
    };
    let mut alpha_r_hat = C64::new(0.0, 0.0);
    let mut s_rank_ratio = 1.0;
    if ris_reliable {
        let ris = &comps[1];
        eta.theta_r = angles_from_frequencies(ris.w1, ris.w2, kappa_b);
        eta.tau_r = delay_from_phase(ris.w_tau, df);
        let prof = &obs.design.profiles;
        let sg = prof.t3.ncols();
        let s = CMatrix::from_fn(sg, sg, |a, b| beta_r[a * sg + b]);
        let svs = crate::linalg::singular_values(&s);
        let mut v: Vec<f64> = svs.iter().copied().collect();
        v.sort_by(|a, b| b.total_cmp(a));
        s_rank_ratio = if v[0] > 0.0 { v.get(1).copied().unwrap_or(0.0) / v[0] } else { 1.0 };
        let (_, u, vv) = dominant_singular_pair(&s);
        let t3c = prof.t3.map(|x| x.conj());
        let t4c = prof.t4.map(|x| x.conj());
        // ϑ ∈ [−2, 2]
        let w_max = 2.0 * kappa_r;
        let wv2 = beamspace_frequency(&u, &t3c, w_max)?;
        let wv3 = beamspace_frequency(&vv.map(|x| x.conj()), &t4c, w_max)?;
        eta.vartheta2 = wv2 / kappa_r;
        eta.vartheta3 = wv3 / kappa_r;
        let bvec = crate::linalg::kron_vec(
            &vandermonde(cfg.ris_array.n1, wv2),
            &vandermonde(cfg.ris_array.n2, wv3),
        );
        let model = prof.upsilon.transpose() * bvec;
        let denom = model.norm_squared();
        if denom > 0.0 {
            alpha_r_hat = model.dotc(&beta_r) / denom;
        }
    }

    Ok(CoarseEstimate {
        eta_hat: eta,
        alpha_l_hat,
        alpha_r_hat,
        beta_r,
        diagnostics: CoarseDiagnostics {
            cp_residual: cp.residual,
            cp_converged: cp.converged,
            pairing_residuals,
            pairing_choice: choice,
            pairing_ratio,
            ris_reliable,
            s_rank_ratio,
        },
    })
}
