//! Least-squares refinement of the eight channel parameters with the two
//! complex gains eliminated in closed form (variable projection).

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SMatrix, SVector};

use crate::channel::{array_response, ArrayGeometry, MeasurementDesign, ObservationSet};
use crate::error::{Error, Result};
use crate::geometry::{AnglePair, ChannelParams, Vec3, SPEED_OF_LIGHT};
use crate::linalg::{cis, CMatrix, CVector, C64, J};
use crate::scenario::ScenarioConfig;

/// Everything the mean model needs besides the parameters.
#[derive(Debug, Clone)]
pub struct ModelContext {
    /// `Wᴴ` (M × N_B).
    pub wh: CMatrix,
    /// Pilots `x_{g,k}` (G × K).
    pub pilots: CMatrix,
    /// RIS profiles, one column per transmission.
    pub upsilon: CMatrix,
    pub bs_array: ArrayGeometry,
    /// Local y and z coordinates of the RIS elements.
    pub ris_yz: Vec<(f64, f64)>,
    pub f_c: f64,
    pub delta_f: f64,
}

impl ModelContext {
    pub fn new(config: &ScenarioConfig, design: &MeasurementDesign) -> Self {
        Self {
            wh: design.combiner.w.adjoint(),
            pilots: design.pilots.clone(),
            upsilon: design.profiles.upsilon.clone(),
            bs_array: config.bs_array.clone(),
            ris_yz: config.ris_array.positions.iter().map(|p| (p[1], p[2])).collect(),
            f_c: config.f_c,
            delta_f: config.delta_f(),
        }
    }

    pub fn from_obs(obs: &ObservationSet) -> Self {
        Self::new(&obs.config, &obs.design)
    }

    pub fn transmissions(&self) -> usize {
        self.pilots.nrows()
    }

    pub fn subcarriers(&self) -> usize {
        self.pilots.ncols()
    }

    pub fn ports(&self) -> usize {
        self.wh.nrows()
    }

    fn wavenumber(&self) -> f64 {
        2.0 * PI * self.f_c / SPEED_OF_LIGHT
    }

    fn beam(&self, a: AnglePair) -> CVector {
        &self.wh * array_response(&self.bs_array, a, self.f_c)
    }

    /// `Wᴴ a_B(θ)` and its derivatives with respect to azimuth and elevation.
    fn beam_with_derivatives(&self, a: AnglePair) -> [CVector; 3] {
        let k0 = self.wavenumber();
        let (saz, caz) = a.az.sin_cos();
        let (sel, cel) = a.el.sin_cos();
        let t = Vec3::new(caz * cel, saz * cel, sel);
        let d_az = Vec3::new(-saz * cel, caz * cel, 0.0);
        let d_el = Vec3::new(-caz * sel, -saz * sel, cel);
        let n = self.bs_array.positions.len();
        let mut v = CVector::zeros(n);
        let mut va = CVector::zeros(n);
        let mut ve = CVector::zeros(n);
        for (i, p) in self.bs_array.positions.iter().enumerate() {
            let e = cis(k0 * t.dot(p));
            v[i] = e;
            va[i] = e * J * (k0 * d_az.dot(p));
            ve[i] = e * J * (k0 * d_el.dot(p));
        }
        [&self.wh * v, &self.wh * va, &self.wh * ve]
    }

    /// `b(ϑ)ᵀ γ_g` for every g, and its derivatives in ϑ2 and ϑ3.
    fn ris_coefficients(&self, v2: f64, v3: f64) -> [CVector; 3] {
        let k0 = self.wavenumber();
        let n = self.ris_yz.len();
        let mut b = CVector::zeros(n);
        let mut b2 = CVector::zeros(n);
        let mut b3 = CVector::zeros(n);
        for (i, &(y, z)) in self.ris_yz.iter().enumerate() {
            let e = cis(k0 * (v2 * y + v3 * z));
            b[i] = e;
            b2[i] = e * J * (k0 * y);
            b3[i] = e * J * (k0 * z);
        }
        let ut = self.upsilon.transpose();
        [&ut * b, &ut * b2, &ut * b3]
    }

    /// Pilot-times-delay row `s[gK+k] = x_{g,k}·coef_g·e^{−j2πkΔfτ}`.
    fn signal_row(&self, coef: &CVector, tau: f64) -> CVector {
        let (gg, kk) = (self.transmissions(), self.subcarriers());
        let step = cis(-2.0 * PI * self.delta_f * tau);
        let mut ph = vec![C64::new(1.0, 0.0); kk];
        for k in 1..kk {
            ph[k] = ph[k - 1] * step;
        }
        CVector::from_fn(gg * kk, |i, _| {
            let (g, k) = (i / kk, i % kk);
            self.pilots[(g, k)] * coef[g] * ph[k]
        })
    }

    fn delay_weights(&self) -> CVector {
        let (gg, kk) = (self.transmissions(), self.subcarriers());
        CVector::from_fn(gg * kk, |i, _| J * (-2.0 * PI * (i % kk) as f64 * self.delta_f))
    }
}

/// Unit-gain means `μ_L`, `μ_R` in the observation layout (M × G·K).
#[derive(Debug, Clone)]
pub struct ModelMeans {
    pub mu_l: CMatrix,
    pub mu_r: CMatrix,
}

impl ModelMeans {
    pub fn combine(&self, alpha_l: C64, alpha_r: C64) -> CMatrix {
        &self.mu_l * alpha_l + &self.mu_r * alpha_r
    }
}

pub fn model_means(eta: &ChannelParams, ctx: &ModelContext) -> ModelMeans {
    let gg = ctx.transmissions();
    let bl = ctx.beam(eta.theta_l);
    let br = ctx.beam(eta.theta_r);
    let ones = CVector::from_element(gg, C64::new(1.0, 0.0));
    let sl = ctx.signal_row(&ones, eta.tau_l);
    let [c, _, _] = ctx.ris_coefficients(eta.vartheta2, eta.vartheta3);
    let sr = ctx.signal_row(&c, eta.tau_r);
    ModelMeans {
        mu_l: bl * sl.transpose(),
        mu_r: br * sr.transpose(),
    }
}

/// Means plus their derivatives with respect to the eight entries of η
/// (order of [`ChannelParams::to_array`], delays in seconds).
#[derive(Debug, Clone)]
pub struct MeanJacobian {
    pub means: ModelMeans,
    pub d_l: Vec<CMatrix>,
    pub d_r: Vec<CMatrix>,
}

impl MeanJacobian {
    /// `∂μ/∂η_j` for the gain-weighted mean.
    pub fn combined(&self, j: usize, alpha_l: C64, alpha_r: C64) -> CMatrix {
        &self.d_l[j] * alpha_l + &self.d_r[j] * alpha_r
    }
}

pub fn mean_jacobian(eta: &ChannelParams, ctx: &ModelContext) -> MeanJacobian {
    let gg = ctx.transmissions();
    let m = ctx.ports();
    let n = gg * ctx.subcarriers();
    let [bl, bl_az, bl_el] = ctx.beam_with_derivatives(eta.theta_l);
    let [br, br_az, br_el] = ctx.beam_with_derivatives(eta.theta_r);
    let ones = CVector::from_element(gg, C64::new(1.0, 0.0));
    let sl = ctx.signal_row(&ones, eta.tau_l);
    let [c, c2, c3] = ctx.ris_coefficients(eta.vartheta2, eta.vartheta3);
    let sr = ctx.signal_row(&c, eta.tau_r);
    let dw = ctx.delay_weights();
    let zero = CMatrix::zeros(m, n);
    let mu_l = &bl * sl.transpose();
    let mu_r = &br * sr.transpose();
    let d_l = vec![
        &bl_az * sl.transpose(),
        &bl_el * sl.transpose(),
        zero.clone(),
        zero.clone(),
        &bl * sl.component_mul(&dw).transpose(),
        zero.clone(),
        zero.clone(),
        zero.clone(),
    ];
    let d_r = vec![
        zero.clone(),
        zero.clone(),
        &br_az * sr.transpose(),
        &br_el * sr.transpose(),
        zero,
        &br * sr.component_mul(&dw).transpose(),
        &br * ctx.signal_row(&c2, eta.tau_r).transpose(),
        &br * ctx.signal_row(&c3, eta.tau_r).transpose(),
    ];
    MeanJacobian {
        means: ModelMeans { mu_l, mu_r },
        d_l,
        d_r,
    }
}

/// Least-squares gains minimizing `‖y − α_L μ_L − α_R μ_R‖²`.
pub fn closed_form_gains(y: &CMatrix, mu_l: &CMatrix, mu_r: &CMatrix) -> Result<(C64, C64)> {
    let ll = mu_l.norm_squared();
    let rr = mu_r.norm_squared();
    let lr = mu_l.dotc(mu_r);
    let ly = mu_l.dotc(y);
    let ry = mu_r.dotc(y);
    let det = ll * rr - lr.norm_sqr();
    if !(det > 1e-12 * ll * rr) {
        return Err(Error::Singular("μ_L and μ_R are collinear".into()));
    }
    let alpha_l = (ly * rr - lr * ry) / det;
    let alpha_r = (ry * ll - lr.conj() * ly) / det;
    Ok((alpha_l, alpha_r))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineOptions {
    /// Maximum number of iterations T.
    pub max_iters: usize,
    /// Stop when the largest gradient entry falls below `grad_tol·‖y‖²`.
    pub grad_tol: f64,
    pub initial_damping: f64,
    pub max_damping: f64,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self {
            max_iters: 40,
            grad_tol: 1e-10,
            initial_damping: 1e-3,
            max_damping: 1e12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxIterations,
    GradientTolerance,
    /// No damped step reduced the objective.
    StepRejected,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineOutcome {
    pub eta: ChannelParams,
    pub alpha_l: C64,
    pub alpha_r: C64,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub stop: StopReason,
}

/// Optimizer coordinates: delays become path lengths in metres.
fn to_scaled(eta: &ChannelParams) -> SVector<f64, 8> {
    let mut v = SVector::<f64, 8>::from(eta.to_array());
    v[4] *= SPEED_OF_LIGHT;
    v[5] *= SPEED_OF_LIGHT;
    v
}

fn from_scaled(v: &SVector<f64, 8>) -> ChannelParams {
    let mut a: [f64; 8] = (*v).into();
    a[4] /= SPEED_OF_LIGHT;
    a[5] /= SPEED_OF_LIGHT;
    ChannelParams::from_array(&a)
}

/// Concentrated objective `‖y − M(η) α̂(η)‖²`.
pub fn concentrated_cost(eta: &ChannelParams, y: &CMatrix, ctx: &ModelContext) -> Result<f64> {
    let m = model_means(eta, ctx);
    let (al, ar) = closed_form_gains(y, &m.mu_l, &m.mu_r)?;
    Ok((y - m.combine(al, ar)).norm_squared())
}

/// Gradient of [`concentrated_cost`] in the optimizer coordinates.
pub fn concentrated_gradient(eta: &ChannelParams, y: &CMatrix, ctx: &ModelContext) -> Result<SVector<f64, 8>> {
    let jac = mean_jacobian(eta, ctx);
    let (al, ar) = closed_form_gains(y, &jac.means.mu_l, &jac.means.mu_r)?;
    let r = y - jac.means.combine(al, ar);
    let mut g = SVector::<f64, 8>::zeros();
    for j in 0..8 {
        let s = if j == 4 || j == 5 { 1.0 / SPEED_OF_LIGHT } else { 1.0 };
        g[j] = -2.0 * r.dotc(&jac.combined(j, al, ar)).re * s;
    }
    Ok(g)
}

struct Linearization {
    cost: f64,
    grad: SVector<f64, 8>,
    normal: SMatrix<f64, 8, 8>,
    alpha: (C64, C64),
}

fn linearize(eta: &ChannelParams, y: &CMatrix, ctx: &ModelContext) -> Result<Linearization> {
    let jac = mean_jacobian(eta, ctx);
    let mu_l = &jac.means.mu_l;
    let mu_r = &jac.means.mu_r;
    let (al, ar) = closed_form_gains(y, mu_l, mu_r)?;
    let r = y - jac.means.combine(al, ar);
    let n = y.len();
    // basis of span{μ_L, μ_R} for the projector P⊥
    let basis = {
        let mut q = DMatrix::<C64>::zeros(n, 2);
        q.set_column(0, &CVector::from_column_slice(mu_l.as_slice()));
        q.set_column(1, &CVector::from_column_slice(mu_r.as_slice()));
        q.qr().q()
    };
    let mut cols = DMatrix::<C64>::zeros(n, 8);
    let mut grad = SVector::<f64, 8>::zeros();
    let rv = CVector::from_column_slice(r.as_slice());
    for j in 0..8 {
        let s = if j == 4 || j == 5 { 1.0 / SPEED_OF_LIGHT } else { 1.0 };
        let d = CVector::from_column_slice(jac.combined(j, al, ar).as_slice()) * C64::from(s);
        grad[j] = -2.0 * rv.dotc(&d).re;
        let proj = &d - &basis * (basis.adjoint() * &d);
        cols.set_column(j, &(-proj));
    }
    let gram = cols.adjoint() * &cols;
    let normal = SMatrix::<f64, 8, 8>::from_fn(|i, j| gram[(i, j)].re);
    Ok(Linearization {
        cost: rv.norm_squared(),
        grad,
        normal,
        alpha: (al, ar),
    })
}

/// Damped Gauss-Newton on the concentrated objective starting from `eta0`.
/// Accepted steps never increase the objective.
pub fn ls_refine(eta0: &ChannelParams, obs: &ObservationSet, opts: &RefineOptions) -> Result<RefineOutcome> {
    let ctx = ModelContext::from_obs(obs);
    ls_refine_with(eta0, &obs.y, &ctx, opts)
}

pub fn ls_refine_with(eta0: &ChannelParams, y: &CMatrix, ctx: &ModelContext, opts: &RefineOptions) -> Result<RefineOutcome> {
    if opts.max_iters == 0 {
        return Err(Error::InvalidInput("max_iters must be at least 1".into()));
    }
    if eta0.to_array().iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("initial parameters must be finite".into()));
    }
    let scale = y.norm_squared().max(f64::MIN_POSITIVE);
    let mut x = to_scaled(eta0);
    let mut lin = linearize(eta0, y, ctx)?;
    let initial_cost = lin.cost;
    let mut lambda = opts.initial_damping;
    let mut stop = StopReason::MaxIterations;
    let mut iterations = 0;
    for _ in 0..opts.max_iters {
        if lin.grad.amax() <= opts.grad_tol * scale {
            stop = StopReason::GradientTolerance;
            break;
        }
        iterations += 1;
        let diag_floor = lin.normal.diagonal().max() * 1e-12;
        let mut accepted = false;
        while lambda <= opts.max_damping {
            let mut a = lin.normal;
            for i in 0..8 {
                a[(i, i)] += lambda * lin.normal[(i, i)].max(diag_floor);
            }
            let rhs = -lin.grad * 0.5;
            let step = match a.cholesky() {
                Some(ch) => ch.solve(&rhs),
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let cand = x + step;
            let eta_c = from_scaled(&cand);
            match concentrated_cost(&eta_c, y, ctx) {
                Ok(c) if c < lin.cost => {
                    x = cand;
                    lin = linearize(&eta_c, y, ctx)?;
                    lambda = (lambda / 10.0).max(1e-15);
                    accepted = true;
                    break;
                }
                _ => lambda *= 10.0,
            }
        }
        if !accepted {
            stop = StopReason::StepRejected;
            break;
        }
    }
    Ok(RefineOutcome {
        eta: from_scaled(&x),
        alpha_l: lin.alpha.0,
        alpha_r: lin.alpha.1,
        initial_cost,
        final_cost: lin.cost,
        iterations,
        stop,
    })
}

/// Stacks a complex matrix column-major into a vector.
pub fn stacked(m: &CMatrix) -> CVector {
    CVector::from_column_slice(m.as_slice())
}

/// Real parameter vector as an nalgebra vector.
pub fn eta_vector(eta: &ChannelParams) -> DVector<f64> {
    DVector::from_column_slice(&eta.to_array())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_pilots_and_profiles, synthesize_observations, MultipathSet, PathGains};
    use crate::geometry::forward_map;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn setup(noise: f64, seed: u64) -> (ObservationSet, PathGains, ChannelParams) {
        let cfg = ScenarioConfig::nominal().with_noise_scale(noise);
        let design = generate_pilots_and_profiles(&cfg, seed).unwrap();
        let gains = PathGains::random(&cfg, &cfg.truth, &mut ChaCha20Rng::seed_from_u64(seed)).unwrap();
        let obs = synthesize_observations(&cfg, &design, &cfg.truth, &gains, &MultipathSet::none(), None, seed + 1).unwrap();
        let eta = forward_map(&cfg.truth, &cfg.bs).unwrap();
        (obs, gains, eta)
    }

    #[test]
    fn means_match_synthesis() {
        let (obs, gains, eta) = setup(0.0, 3);
        let ctx = ModelContext::from_obs(&obs);
        let m = model_means(&eta, &ctx);
        let mu = m.combine(gains.alpha_l, gains.alpha_r());
        assert!((&mu - &obs.mu).norm() < 1e-10 * obs.mu.norm());
    }

    #[test]
    fn zero_profile_gives_zero_ris_mean() {
        let (obs, _, eta) = setup(0.0, 3);
        let mut ctx = ModelContext::from_obs(&obs);
        ctx.upsilon.fill(C64::new(0.0, 0.0));
        assert_eq!(model_means(&eta, &ctx).mu_r.norm(), 0.0);
    }

    #[test]
    fn gains_exact_representation() {
        let (obs, _, eta) = setup(0.0, 4);
        let m = model_means(&eta, &ModelContext::from_obs(&obs));
        let y = m.combine(C64::new(2.0, 0.0), C64::new(0.0, 3.0));
        let (al, ar) = closed_form_gains(&y, &m.mu_l, &m.mu_r).unwrap();
        assert!((al - C64::new(2.0, 0.0)).norm() < 1e-12);
        assert!((ar - C64::new(0.0, 3.0)).norm() < 1e-12);
        assert!(closed_form_gains(&y, &m.mu_l, &(&m.mu_l * C64::new(0.0, 2.0))).is_err());
    }

    #[test]
    fn gains_orthogonal_limit() {
        let a = CMatrix::from_column_slice(2, 1, &[C64::new(1.0, 0.0), C64::new(0.0, 0.0)]);
        let b = CMatrix::from_column_slice(2, 1, &[C64::new(0.0, 0.0), C64::new(2.0, 0.0)]);
        let y = CMatrix::from_column_slice(2, 1, &[C64::new(0.5, 1.0), C64::new(3.0, -1.0)]);
        let (al, _) = closed_form_gains(&y, &a, &b).unwrap();
        assert!((al - a.dotc(&y) / a.norm_squared()).norm() < 1e-15);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let (obs, _, eta) = setup(0.0, 5);
        let ctx = ModelContext::from_obs(&obs);
        let jac = mean_jacobian(&eta, &ctx);
        let base = eta.to_array();
        for j in 0..8 {
            let h = if j == 4 || j == 5 { 1e-13 } else { 1e-6 };
            let mut p = base;
            let mut q = base;
            p[j] += h;
            q[j] -= h;
            let mp = model_means(&ChannelParams::from_array(&p), &ctx);
            let mq = model_means(&ChannelParams::from_array(&q), &ctx);
            for (fd, an) in [
                ((&mp.mu_l - &mq.mu_l) / C64::from(2.0 * h), &jac.d_l[j]),
                ((&mp.mu_r - &mq.mu_r) / C64::from(2.0 * h), &jac.d_r[j]),
            ] {
                let denom = an.norm().max(fd.norm());
                if denom == 0.0 {
                    continue;
                }
                assert!((fd - an).norm() / denom < 1e-5, "parameter {j}");
            }
        }
    }

    #[test]
    fn stationary_at_truth_without_noise() {
        let (obs, _, eta) = setup(0.0, 6);
        let out = ls_refine(&eta, &obs, &RefineOptions::default()).unwrap();
        assert_eq!(out.stop, StopReason::GradientTolerance);
        let (a, b) = (out.eta.to_array(), eta.to_array());
        for i in 0..8 {
            assert!((a[i] - b[i]).abs() <= 1e-12 * b[i].abs().max(1e-7));
        }
    }

    #[test]
    fn converges_back_from_perturbation() {
        let (obs, _, eta) = setup(0.0, 7);
        let mut p = eta.to_array();
        for (i, v) in p.iter_mut().enumerate() {
            *v += if i == 4 || i == 5 { 1e-3 / SPEED_OF_LIGHT } else { 1e-3 };
        }
        let out = ls_refine(&ChannelParams::from_array(&p), &obs, &RefineOptions::default()).unwrap();
        assert!(out.final_cost <= out.initial_cost);
        let (a, b) = (out.eta.to_array(), eta.to_array());
        for i in 0..8 {
            let s = if i == 4 || i == 5 { b[i].abs() } else { b[i].abs().max(1.0) };
            assert!((a[i] - b[i]).abs() <= 1e-8 * s, "component {i}: {} vs {}", a[i], b[i]);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (obs, _, eta) = setup(1.0, 8);
        let ctx = ModelContext::from_obs(&obs);
        let g = concentrated_gradient(&eta, &obs.y, &ctx).unwrap();
        let x = to_scaled(&eta);
        for j in 0..8 {
            let h = 1e-6;
            let mut p = x;
            let mut q = x;
            p[j] += h;
            q[j] -= h;
            let fd = (concentrated_cost(&from_scaled(&p), &obs.y, &ctx).unwrap()
                - concentrated_cost(&from_scaled(&q), &obs.y, &ctx).unwrap())
                / (2.0 * h);
            assert!((fd - g[j]).abs() <= 1e-4 * g[j].abs().max(fd.abs()) + 1e-9 * obs.y.norm_squared());
        }
    }
}
