//! Channel parameters to UE position, RIS position, RIS rotation and clock
//! bias through a shrinking 2D grid search over `(o3, Δ)`.

use std::cmp::Ordering;
use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{aoa_in_lcs, direction_vector, intermediate_angles, ChannelParams, LocalizationState, Pose, Vec3, MIN_DISTANCE, SPEED_OF_LIGHT};
use crate::linalg::wrap_pi;

/// Candidate `(p_U, p_R)` for a hypothesized RIS rotation and clock bias.
/// Returns `None` when the hypothesis is geometrically impossible.
pub fn candidate_solution(eta: &ChannelParams, delta: f64, bs: &Pose) -> Option<(Vec3, Vec3)> {
    let d_l = SPEED_OF_LIGHT * (eta.tau_l - delta);
    let d_r = SPEED_OF_LIGHT * (eta.tau_r - delta);
    if !(d_l > MIN_DISTANCE && d_r > d_l) {
        return None;
    }
    let rot = bs.rotation();
    let p_b = bs.position;
    let p_u = p_b + rot * direction_vector(eta.theta_l) * d_l;
    let u = rot * direction_vector(eta.theta_r);
    let denom = 2.0 * (d_r + u.dot(&(p_b - p_u)));
    if denom.abs() < 1e-12 * d_r {
        return None;
    }
    let x = (d_r * d_r - d_l * d_l) / denom;
    if !(x > MIN_DISTANCE && x < d_r) {
        return None;
    }
    Some((p_u, p_b + u * x))
}

/// Distance between two intermediate-angle pairs. With `alias_period`, the
/// difference is taken modulo the period of the RIS spatial frequency.
fn vartheta_mismatch(pred: (f64, f64), est: (f64, f64), alias_period: Option<f64>) -> f64 {
    let wrap = |d: f64| match alias_period {
        Some(p) => d - p * (d / p).round(),
        None => d,
    };
    let a = wrap(pred.0 - est.0);
    let b = wrap(pred.1 - est.1);
    a * a + b * b
}

/// Squared intermediate-angle mismatch of the candidate geometry; `+∞` for
/// impossible hypotheses.
pub fn cost(eta: &ChannelParams, o3: f64, delta: f64, bs: &Pose, fixed_o1_o2: [f64; 2]) -> f64 {
    cost_with_alias(eta, o3, delta, bs, fixed_o1_o2, None)
}

pub fn cost_with_alias(eta: &ChannelParams, o3: f64, delta: f64, bs: &Pose, fixed_o1_o2: [f64; 2], alias_period: Option<f64>) -> f64 {
    if delta < 0.0 {
        return f64::INFINITY;
    }
    let Some((p_u, p_r)) = candidate_solution(eta, delta, bs) else {
        return f64::INFINITY;
    };
    let ris = Pose {
        position: p_r,
        euler: Vec3::new(fixed_o1_o2[0], fixed_o1_o2[1], o3),
    };
    let (Ok(phi_a), Ok(phi_d)) = (aoa_in_lcs(&ris, &p_u), aoa_in_lcs(&ris, &bs.position)) else {
        return f64::INFINITY;
    };
    // the surface only reflects into its front half-space; this also removes
    // the mirrored o3 root that fits the intermediate angles equally well
    if direction_vector(phi_a).x <= 0.0 || direction_vector(phi_d).x <= 0.0 {
        return f64::INFINITY;
    }
    let pred = intermediate_angles(phi_a, phi_d);
    vartheta_mismatch(pred, (eta.vartheta2, eta.vartheta3), alias_period)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchConfig {
    /// Initial o3 interval `[lo, hi)`.
    pub o3_range: (f64, f64),
    /// Initial clock-bias interval `[lo, hi)`, seconds.
    pub delta_range: (f64, f64),
    pub c_o3: usize,
    pub c_delta: usize,
    /// Resolution shrink factor κ per round.
    pub kappa: f64,
    /// Number of refinement rounds Q.
    pub rounds: usize,
    pub fixed_o1_o2: [f64; 2],
    /// Period of the intermediate-angle estimates when the RIS spacing aliases.
    pub alias_period: Option<f64>,
    /// Distinct local minima of the initial grid refined in parallel; 1
    /// follows only the global winner.
    pub starts: usize,
}

impl SearchConfig {
    /// Defaults: 64 × 64 grid over `[−π, π) × [0, 0.9/Δf)`, κ = 0.1, Q = 3.
    pub fn new(delta_f: f64) -> Self {
        Self {
            o3_range: (-PI, PI),
            delta_range: (0.0, 0.9 / delta_f),
            c_o3: 64,
            c_delta: 64,
            kappa: 0.1,
            rounds: 3,
            fixed_o1_o2: [0.0, 0.0],
            alias_period: None,
            starts: 4,
        }
    }

    /// Enables alias-aware costs when the RIS spacing exceeds a quarter wavelength.
    pub fn with_ris_spacing(mut self, spacing: f64, wavelength: f64) -> Self {
        self.alias_period = if spacing > 0.25 * wavelength * (1.0 + 1e-9) {
            Some(wavelength / spacing)
        } else {
            None
        };
        self
    }

    pub fn resolution(&self, round: usize) -> (f64, f64) {
        let s = self.kappa.powi(round as i32);
        (
            s * (self.o3_range.1 - self.o3_range.0) / self.c_o3 as f64,
            s * (self.delta_range.1 - self.delta_range.0) / self.c_delta as f64,
        )
    }

    fn validate(&self) -> Result<()> {
        if self.c_o3 == 0 || self.c_delta == 0 || self.starts == 0 {
            return Err(Error::InvalidInput("search sets must be nonempty".into()));
        }
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return Err(Error::InvalidInput("κ must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundResult {
    pub o3: f64,
    pub delta: f64,
    pub cost: f64,
    pub state: LocalizationState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub state: LocalizationState,
    pub cost: f64,
    /// Winner after the initial grid (index 0) and after each refinement.
    pub rounds: Vec<RoundResult>,
}

fn better(a: &(f64, f64, f64), b: &(f64, f64, f64)) -> Ordering {
    a.0.total_cmp(&b.0)
        .then(a.2.total_cmp(&b.2))
        .then(a.1.abs().total_cmp(&b.1.abs()))
}

fn best_on_grid(eta: &ChannelParams, o3s: &[f64], deltas: &[f64], bs: &Pose, cfg: &SearchConfig) -> Option<(f64, f64, f64)> {
    let pts: Vec<(f64, f64)> = deltas
        .iter()
        .flat_map(|&d| o3s.iter().map(move |&o| (o, d)))
        .collect();
    pts.par_iter()
        .map(|&(o, d)| (cost_with_alias(eta, o, d, bs, cfg.fixed_o1_o2, cfg.alias_period), o, d))
        .filter(|c| c.0.is_finite())
        .min_by(better)
}

/// Best `count` finite local minima of the initial grid (8-neighbourhood,
/// periodic in o3), in `better` order; the first is the global winner.
fn initial_minima(eta: &ChannelParams, o3s: &[f64], deltas: &[f64], bs: &Pose, cfg: &SearchConfig, count: usize) -> Vec<(f64, f64, f64)> {
    let (no, nd) = (o3s.len(), deltas.len());
    let costs: Vec<f64> = (0..no * nd)
        .into_par_iter()
        .map(|i| cost_with_alias(eta, o3s[i % no], deltas[i / no], bs, cfg.fixed_o1_o2, cfg.alias_period))
        .collect();
    let periodic = (o3s.len() as f64 * (o3s[1.min(no - 1)] - o3s[0]) - 2.0 * PI).abs() < 1e-9;
    let mut minima: Vec<(f64, f64, f64)> = Vec::new();
    for id in 0..nd {
        for io in 0..no {
            let c = costs[id * no + io];
            if !c.is_finite() {
                continue;
            }
            let is_min = (-1i64..=1).all(|dd| {
                (-1i64..=1).all(|do_| {
                    let jd = id as i64 + dd;
                    let mut jo = io as i64 + do_;
                    if (dd == 0 && do_ == 0) || jd < 0 || jd >= nd as i64 {
                        return true;
                    }
                    if periodic {
                        jo = jo.rem_euclid(no as i64);
                    } else if jo < 0 || jo >= no as i64 {
                        return true;
                    }
                    !(costs[jd as usize * no + jo as usize] < c)
                })
            });
            if is_min {
                minima.push((c, o3s[io], deltas[id]));
            }
        }
    }
    minima.sort_by(better);
    minima.truncate(count);
    minima
}

/// Winners of one start after each refinement round.
fn refine_chain(eta: &ChannelParams, start: (f64, f64, f64), search: &SearchConfig, bs: &Pose) -> Vec<(f64, f64, f64)> {
    let (mut d_o3, mut d_delta) = search.resolution(0);
    let mut winner = start;
    let mut chain = vec![start];
    let half_o = (search.c_o3 / 2) as f64;
    let half_d = (search.c_delta / 2) as f64;
    for _ in 0..search.rounds {
        d_o3 *= search.kappa;
        d_delta *= search.kappa;
        let (_, o3, delta) = winner;
        let o3s: Vec<f64> = (0..search.c_o3)
            .map(|j| wrap_pi(o3 + (j as f64 - half_o) * d_o3))
            .collect();
        let deltas: Vec<f64> = (0..search.c_delta)
            .map(|j| delta + (j as f64 - half_d) * d_delta)
            .filter(|&d| d >= 0.0)
            .collect();
        if let Some(f) = best_on_grid(eta, &o3s, &deltas, bs, search) {
            if better(&f, &winner) != Ordering::Greater {
                winner = f;
            }
        }
        chain.push(winner);
    }
    chain
}

/// Initial grid, then `rounds` refinements centred on the running winner
/// with resolution shrunk by κ. The best `starts` local minima of the
/// initial grid are refined separately; round `q` reports the best chain
/// after `q` refinements.
pub fn grid_search(eta: &ChannelParams, search: &SearchConfig, bs: &Pose) -> Result<SearchOutcome> {
    search.validate()?;
    let grid = |lo: f64, step: f64, n: usize| (0..n).map(|j| lo + j as f64 * step).collect::<Vec<_>>();
    let (d_o3, d_delta) = search.resolution(0);
    let o3s = grid(search.o3_range.0, d_o3, search.c_o3);
    let deltas = grid(search.delta_range.0, d_delta, search.c_delta);
    let mut starts = initial_minima(eta, &o3s, &deltas, bs, search, search.starts);
    if starts.is_empty() {
        // plateaus of equal cost have no strict minimum
        starts.extend(best_on_grid(eta, &o3s, &deltas, bs, search));
    }
    if starts.is_empty() {
        return Err(Error::SearchFailed("every grid candidate is geometrically invalid".into()));
    }
    let chains: Vec<Vec<(f64, f64, f64)>> = starts.iter().map(|&s| refine_chain(eta, s, search, bs)).collect();
    let rounds: Vec<RoundResult> = (0..=search.rounds)
        .map(|q| {
            let (cost, o3, delta) = chains.iter().map(|c| c[q]).min_by(better).expect("nonempty");
            let (p_u, p_r) = candidate_solution(eta, delta, bs).expect("winner is a valid candidate");
            RoundResult {
                o3,
                delta,
                cost,
                state: LocalizationState {
                    p_u,
                    p_r,
                    o3: wrap_pi(o3),
                    clock_bias: delta,
                    fixed_o1_o2: search.fixed_o1_o2,
                },
            }
        })
        .collect();
    let last = *rounds.last().expect("at least one round");
    Ok(SearchOutcome {
        state: last.state,
        cost: last.cost,
        rounds,
    })
}

/// Hessian of the cost in `(o3 [rad], c·Δ [m])` by central differences.
pub fn cost_hessian(eta: &ChannelParams, o3: f64, delta: f64, bs: &Pose, fixed_o1_o2: [f64; 2], step: f64) -> [[f64; 2]; 2] {
    let f = |a: f64, b: f64| cost(eta, o3 + a, delta + b / SPEED_OF_LIGHT, bs, fixed_o1_o2);
    let h = step;
    let f0 = f(0.0, 0.0);
    let faa = (f(h, 0.0) - 2.0 * f0 + f(-h, 0.0)) / (h * h);
    let fbb = (f(0.0, h) - 2.0 * f0 + f(0.0, -h)) / (h * h);
    let fab = (f(h, h) - f(h, -h) - f(-h, h) + f(-h, -h)) / (4.0 * h * h);
    [[faa, fab], [fab, fbb]]
}

/// Smallest eigenvalue of a symmetric 2 × 2 matrix.
pub fn min_curvature(h: [[f64; 2]; 2]) -> f64 {
    let tr = h[0][0] + h[1][1];
    let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    tr / 2.0 - disc
}
