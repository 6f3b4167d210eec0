//! Forward geometric model: device poses to angles, delays and the
//! intermediate RIS angles that the channel depends on.
//!
//! Orientation convention: Euler angles `[o1, o2, o3]` are rotations about the
//! X, Y and Z axes, composed as `R = Rz(o3) · Ry(o2) · Rx(o1)`. The default
//! orientation faces the positive X axis, and arrays live in the YOZ plane of
//! their local frame.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// Propagation speed in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Distances below this are treated as coincident points.
pub const MIN_DISTANCE: f64 = 1e-9;

pub type Vec3 = Vector3<f64>;

pub fn rotation_matrix(euler: &Vec3) -> Matrix3<f64> {
    let (s1, c1) = euler[0].sin_cos();
    let (s2, c2) = euler[1].sin_cos();
    let (s3, c3) = euler[2].sin_cos();
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, c1, -s1, 0.0, s1, c1);
    let ry = Matrix3::new(c2, 0.0, s2, 0.0, 1.0, 0.0, -s2, 0.0, c2);
    let rz = Matrix3::new(c3, -s3, 0.0, s3, c3, 0.0, 0.0, 0.0, 1.0);
    rz * ry * rx
}

/// Derivative of [`rotation_matrix`] with respect to the Z-axis angle.
pub fn rotation_matrix_dz(euler: &Vec3) -> Matrix3<f64> {
    let (s1, c1) = euler[0].sin_cos();
    let (s2, c2) = euler[1].sin_cos();
    let (s3, c3) = euler[2].sin_cos();
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, c1, -s1, 0.0, s1, c1);
    let ry = Matrix3::new(c2, 0.0, s2, 0.0, 1.0, 0.0, -s2, 0.0, c2);
    let drz = Matrix3::new(-s3, -c3, 0.0, c3, -s3, 0.0, 0.0, 0.0, 0.0);
    drz * ry * rx
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vec3,
    pub euler: Vec3,
}

impl Pose {
    pub fn new(position: [f64; 3], euler: [f64; 3]) -> Self {
        Self {
            position: Vec3::from(position),
            euler: Vec3::from(euler),
        }
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        rotation_matrix(&self.euler)
    }
}

/// Azimuth/elevation pair in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AnglePair {
    pub az: f64,
    pub el: f64,
}

impl AnglePair {
    pub fn new(az: f64, el: f64) -> Self {
        Self { az, el }
    }
}

pub fn direction_vector(a: AnglePair) -> Vec3 {
    let (saz, caz) = a.az.sin_cos();
    let (sel, cel) = a.el.sin_cos();
    Vec3::new(caz * cel, saz * cel, sel)
}

/// Angle of `target` as seen from `observer`, in the observer's local frame.
pub fn aoa_in_lcs(observer: &Pose, target: &Vec3) -> Result<AnglePair> {
    let diff = target - observer.position;
    let dist = diff.norm();
    if dist < MIN_DISTANCE {
        return Err(Error::DegenerateGeometry(
            "target coincides with observer".into(),
        ));
    }
    let local = observer.rotation().transpose() * diff;
    Ok(local_direction_angles(&(local / dist)))
}

/// Az/el of a unit vector expressed in a local frame.
pub(crate) fn local_direction_angles(u: &Vec3) -> AnglePair {
    let n = u.norm();
    let z = (u[2] / n).clamp(-1.0, 1.0);
    AnglePair {
        az: u[1].atan2(u[0]),
        el: z.asin(),
    }
}

/// Unknown localization parameters plus the known part of the RIS orientation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalizationState {
    pub p_u: Vec3,
    pub p_r: Vec3,
    /// RIS rotation about Z, radians.
    pub o3: f64,
    /// Clock bias between UE and BS, seconds.
    pub clock_bias: f64,
    /// Known RIS rotations about X and Y.
    pub fixed_o1_o2: [f64; 2],
}

impl LocalizationState {
    pub fn ris_pose(&self) -> Pose {
        Pose {
            position: self.p_r,
            euler: self.ris_euler(),
        }
    }

    pub fn ris_euler(&self) -> Vec3 {
        Vec3::new(self.fixed_o1_o2[0], self.fixed_o1_o2[1], self.o3)
    }

    /// `[p_U, p_R, o3, Δ]` as an 8-vector.
    pub fn to_vector(&self) -> [f64; 8] {
        [
            self.p_u[0],
            self.p_u[1],
            self.p_u[2],
            self.p_r[0],
            self.p_r[1],
            self.p_r[2],
            self.o3,
            self.clock_bias,
        ]
    }

    pub fn from_vector(v: &[f64; 8], fixed_o1_o2: [f64; 2]) -> Self {
        Self {
            p_u: Vec3::new(v[0], v[1], v[2]),
            p_r: Vec3::new(v[3], v[4], v[5]),
            o3: v[6],
            clock_bias: v[7],
            fixed_o1_o2,
        }
    }
}

/// The eight localization-related channel parameters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ChannelParams {
    pub theta_l: AnglePair,
    pub theta_r: AnglePair,
    pub tau_l: f64,
    pub tau_r: f64,
    pub vartheta2: f64,
    pub vartheta3: f64,
}

impl ChannelParams {
    /// `[θL az, θL el, θR az, θR el, τL, τR, ϑ2, ϑ3]`.
    pub fn to_array(&self) -> [f64; 8] {
        [
            self.theta_l.az,
            self.theta_l.el,
            self.theta_r.az,
            self.theta_r.el,
            self.tau_l,
            self.tau_r,
            self.vartheta2,
            self.vartheta3,
        ]
    }

    pub fn from_array(v: &[f64; 8]) -> Self {
        Self {
            theta_l: AnglePair::new(v[0], v[1]),
            theta_r: AnglePair::new(v[2], v[3]),
            tau_l: v[4],
            tau_r: v[5],
            vartheta2: v[6],
            vartheta3: v[7],
        }
    }
}

/// Channel parameters together with the two nuisance complex gains.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FullChannelParams {
    pub eta: ChannelParams,
    pub alpha_l: num_complex::Complex64,
    pub alpha_r: num_complex::Complex64,
}

impl FullChannelParams {
    /// `[η, ℜαL, ℑαL, ℜαR, ℑαR]`.
    pub fn to_array(&self) -> [f64; 12] {
        let e = self.eta.to_array();
        let mut out = [0.0; 12];
        out[..8].copy_from_slice(&e);
        out[8] = self.alpha_l.re;
        out[9] = self.alpha_l.im;
        out[10] = self.alpha_r.re;
        out[11] = self.alpha_r.im;
        out
    }

    pub fn from_array(v: &[f64; 12]) -> Self {
        let mut e = [0.0; 8];
        e.copy_from_slice(&v[..8]);
        Self {
            eta: ChannelParams::from_array(&e),
            alpha_l: num_complex::Complex64::new(v[8], v[9]),
            alpha_r: num_complex::Complex64::new(v[10], v[11]),
        }
    }
}

pub fn path_delays(state: &LocalizationState, p_b: &Vec3) -> Result<(f64, f64)> {
    let d_ub = (p_b - state.p_u).norm();
    let d_ur = (state.p_r - state.p_u).norm();
    let d_rb = (p_b - state.p_r).norm();
    if d_ub < MIN_DISTANCE || d_ur < MIN_DISTANCE || d_rb < MIN_DISTANCE {
        return Err(Error::DegenerateGeometry("coincident device positions".into()));
    }
    Ok((
        d_ub / SPEED_OF_LIGHT + state.clock_bias,
        (d_ur + d_rb) / SPEED_OF_LIGHT + state.clock_bias,
    ))
}

pub fn intermediate_angles(phi_a: AnglePair, phi_d: AnglePair) -> (f64, f64) {
    let v2 = phi_a.az.sin() * phi_a.el.cos() + phi_d.az.sin() * phi_d.el.cos();
    let v3 = phi_a.el.sin() + phi_d.el.sin();
    (v2, v3)
}

/// RIS arrival (from UE) and departure (towards BS) angles in the RIS frame.
pub fn ris_angles(state: &LocalizationState, p_b: &Vec3) -> Result<(AnglePair, AnglePair)> {
    let ris = state.ris_pose();
    Ok((aoa_in_lcs(&ris, &state.p_u)?, aoa_in_lcs(&ris, p_b)?))
}

/// Maps a localization state to the channel parameters observed at `bs`.
pub fn forward_map(state: &LocalizationState, bs: &Pose) -> Result<ChannelParams> {
    let theta_l = aoa_in_lcs(bs, &state.p_u)?;
    let theta_r = aoa_in_lcs(bs, &state.p_r)?;
    let (tau_l, tau_r) = path_delays(state, &bs.position)?;
    let (phi_a, phi_d) = ris_angles(state, &bs.position)?;
    let (vartheta2, vartheta3) = intermediate_angles(phi_a, phi_d);
    Ok(ChannelParams {
        theta_l,
        theta_r,
        tau_l,
        tau_r,
        vartheta2,
        vartheta3,
    })
}
