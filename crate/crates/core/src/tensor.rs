//! Dense third-order complex tensors and rank-R CP decomposition.
//!
//! Layout: entry `(i1, i2, i3)` lives at `i1 + I1·(i2 + I2·i3)`, first index
//! fastest. Mode-n unfoldings follow the same ordering for the remaining
//! indices, so `T_(1) = U1 Λ (U3 ⊙ U2)ᵀ` with `⊙` the Khatri-Rao product.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::channel::complex_normal;
use crate::error::{Error, Result};
use crate::linalg::{dominant_singular_pair, eigen_decomposition, khatri_rao, CMatrix, CVector, C64};

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexTensor3 {
    dims: [usize; 3],
    data: Vec<C64>,
}

impl ComplexTensor3 {
    pub fn zeros(dims: [usize; 3]) -> Self {
        Self {
            dims,
            data: vec![C64::new(0.0, 0.0); dims[0] * dims[1] * dims[2]],
        }
    }

    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for i3 in 0..dims[2] {
            for i2 in 0..dims[1] {
                for i1 in 0..dims[0] {
                    data.push(f(i1, i2, i3));
                }
            }
        }
        Self { dims, data }
    }

    pub fn from_vec(dims: [usize; 3], data: Vec<C64>) -> Result<Self> {
        if data.len() != dims[0] * dims[1] * dims[2] {
            return Err(Error::InvalidInput(format!(
                "tensor data length {} does not match dims {:?}",
                data.len(),
                dims
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    fn offset(&self, i1: usize, i2: usize, i3: usize) -> usize {
        i1 + self.dims[0] * (i2 + self.dims[1] * i3)
    }

    pub fn get(&self, i1: usize, i2: usize, i3: usize) -> C64 {
        self.data[self.offset(i1, i2, i3)]
    }

    pub fn set(&mut self, i1: usize, i2: usize, i3: usize, v: C64) {
        let o = self.offset(i1, i2, i3);
        self.data[o] = v;
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn scale(&self, s: C64) -> Self {
        Self {
            dims: self.dims,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// Frobenius distance to another tensor of equal shape.
    pub fn distance(&self, other: &Self) -> f64 {
        assert_eq!(self.dims, other.dims);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// Mode-n matricization, `mode ∈ {1, 2, 3}`.
    pub fn unfold(&self, mode: usize) -> Result<CMatrix> {
        let [i1n, i2n, i3n] = self.dims;
        match mode {
            1 => Ok(CMatrix::from_fn(i1n, i2n * i3n, |r, c| self.get(r, c % i2n, c / i2n))),
            2 => Ok(CMatrix::from_fn(i2n, i1n * i3n, |r, c| self.get(c % i1n, r, c / i1n))),
            3 => Ok(CMatrix::from_fn(i3n, i1n * i2n, |r, c| self.get(c % i1n, c / i1n, r))),
            _ => Err(Error::InvalidInput(format!("mode must be 1, 2 or 3, got {mode}"))),
        }
    }

    /// Inverse of [`unfold`](Self::unfold).
    pub fn fold(m: &CMatrix, mode: usize, dims: [usize; 3]) -> Result<Self> {
        let [i1n, i2n, i3n] = dims;
        let expect = match mode {
            1 => (i1n, i2n * i3n),
            2 => (i2n, i1n * i3n),
            3 => (i3n, i1n * i2n),
            _ => return Err(Error::InvalidInput(format!("mode must be 1, 2 or 3, got {mode}"))),
        };
        if m.shape() != expect {
            return Err(Error::InvalidInput("unfolding shape mismatch".into()));
        }
        Ok(Self::from_fn(dims, |a, b, c| match mode {
            1 => m[(a, b + i2n * c)],
            2 => m[(b, a + i1n * c)],
            _ => m[(c, a + i1n * b)],
        }))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CpFactors {
    pub u1: CMatrix,
    pub u2: CMatrix,
    pub u3: CMatrix,
    pub weights: CVector,
    /// Relative reconstruction residual `‖T − T̂‖/‖T‖`.
    pub residual: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl CpFactors {
    pub fn rank(&self) -> usize {
        self.weights.len()
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.u1.nrows(), self.u2.nrows(), self.u3.nrows()]
    }

    /// Largest `|⟨u_r, u_s⟩|` between distinct unit columns in any mode.
    pub fn max_collinearity(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for u in [&self.u1, &self.u2, &self.u3] {
            for r in 0..u.ncols() {
                for s in r + 1..u.ncols() {
                    worst = worst.max(u.column(r).dotc(&u.column(s)).norm());
                }
            }
        }
        worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CpOptions {
    pub max_iters: usize,
    pub tol: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for CpOptions {
    fn default() -> Self {
        Self {
            max_iters: 500,
            tol: 1e-10,
            restarts: 3,
            seed: 0,
        }
    }
}

pub fn reconstruct(f: &CpFactors) -> ComplexTensor3 {
    let dims = f.dims();
    let kr = khatri_rao(&f.u3, &f.u2);
    let m = &f.u1 * CMatrix::from_diagonal(&f.weights) * kr.transpose();
    ComplexTensor3::fold(&m, 1, dims).expect("consistent factor shapes")
}

/// Scales columns to unit norm and makes each column's first nonzero entry
/// real-positive, moving magnitude and phase into the weights.
fn normalize(u: [CMatrix; 3], mut weights: CVector) -> ([CMatrix; 3], CVector) {
    let mut u = u;
    for m in u.iter_mut() {
        for r in 0..m.ncols() {
            let n = m.column(r).norm();
            if n == 0.0 {
                weights[r] = C64::new(0.0, 0.0);
                continue;
            }
            let first = m
                .column(r)
                .iter()
                .copied()
                .find(|v| v.norm() > 1e-14 * n)
                .unwrap_or(C64::new(1.0, 0.0));
            let ph = first / first.norm();
            let s = ph * n;
            for v in m.column_mut(r).iter_mut() {
                *v /= s;
            }
            weights[r] *= s;
        }
    }
    (u, weights)
}

fn solve_factor(unfold: &CMatrix, kr: &CMatrix, gram: &CMatrix) -> CMatrix {
    // argmin ‖T_(n) − U krᵀ‖ is U = T_(n) conj(kr) conj(gram)⁻¹
    let rhs = unfold * kr.map(|v| v.conj());
    let g = gram.map(|v| v.conj());
    let svd = crate::linalg::svd(&g, true, true);
    let smax = svd.singular_values.max();
    let pinv = svd
        .pseudo_inverse(smax * 1e-13)
        .unwrap_or_else(|_| CMatrix::zeros(gram.nrows(), gram.ncols()));
    rhs * pinv
}

struct AlsRun {
    u: [CMatrix; 3],
    residual: f64,
    converged: bool,
    iterations: usize,
}

fn als(t: &ComplexTensor3, unf: &[CMatrix; 3], init: [CMatrix; 3], opts: &CpOptions) -> AlsRun {
    let tn = t.norm();
    let [mut a, mut b, mut c] = init;
    let resid = |a: &CMatrix, b: &CMatrix, c: &CMatrix| -> f64 {
        let m = a * khatri_rao(c, b).transpose();
        (&unf[0] - m).norm() / tn
    };
    let mut prev = resid(&a, &b, &c);
    if prev < 1e-13 {
        return AlsRun {
            u: [a, b, c],
            residual: prev,
            converged: true,
            iterations: 0,
        };
    }
    for it in 1..=opts.max_iters {
        a = solve_factor(&unf[0], &khatri_rao(&c, &b), &((c.adjoint() * &c).component_mul(&(b.adjoint() * &b))));
        b = solve_factor(&unf[1], &khatri_rao(&c, &a), &((c.adjoint() * &c).component_mul(&(a.adjoint() * &a))));
        c = solve_factor(&unf[2], &khatri_rao(&b, &a), &((b.adjoint() * &b).component_mul(&(a.adjoint() * &a))));
        // keep the scale in `c` only, so the iteration stays well balanced
        for r in 0..a.ncols() {
            let (na, nb) = (a.column(r).norm(), b.column(r).norm());
            if na > 0.0 && nb > 0.0 {
                a.column_mut(r).unscale_mut(na);
                b.column_mut(r).unscale_mut(nb);
                c.column_mut(r).scale_mut(na * nb);
            }
        }
        let res = resid(&a, &b, &c);
        if res < 1e-13 || (prev - res).abs() < opts.tol {
            return AlsRun {
                u: [a, b, c],
                residual: res,
                converged: true,
                iterations: it,
            };
        }
        prev = res;
    }
    AlsRun {
        u: [a, b, c],
        residual: prev,
        converged: false,
        iterations: opts.max_iters,
    }
}

fn leading_left_vectors(m: &CMatrix, r: usize) -> CMatrix {
    let svd = crate::linalg::svd(m, true, false);
    let u = svd.u.expect("requested U");
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let mut out = CMatrix::zeros(m.nrows(), r);
    for (k, &i) in idx.iter().take(r).enumerate() {
        out.set_column(k, &u.column(i));
    }
    out
}

/// Direct initialization from a generalized eigendecomposition of two
/// random combinations of compressed mode-3 slices. Exact for noise-free
/// tensors of rank R with non-collinear mode-1 and mode-2 factors.
fn gevd_init(t: &ComplexTensor3, unf: &[CMatrix; 3], r: usize, rng: &mut ChaCha20Rng) -> Option<[CMatrix; 3]> {
    let [i1n, i2n, i3n] = t.dims();
    if r > i1n || r > i2n || i3n < 2 {
        return None;
    }
    let q1 = leading_left_vectors(&unf[0], r);
    let q2 = leading_left_vectors(&unf[1], r);
    // compressed slices: S_k = Q1ᴴ T[:, :, k] conj(Q2)
    let slice = |k: usize| CMatrix::from_fn(i1n, i2n, |a, b| t.get(a, b, k));
    let mut sa = CMatrix::zeros(r, r);
    let mut sb = CMatrix::zeros(r, r);
    for k in 0..i3n {
        let s = q1.adjoint() * slice(k) * q2.map(|v| v.conj());
        sa += &s * complex_normal(1.0, rng);
        sb += s * complex_normal(1.0, rng);
    }
    let sb_inv = sb.try_inverse()?;
    let (_, vecs) = eigen_decomposition(&(sa * sb_inv)).ok()?;
    let a = &q1 * vecs;
    // B and C from the rank-1 rows of A⁺ T_(1)
    let pinv = crate::linalg::pinv(&a, 1e-13 * a.norm())?;
    let rows = pinv * &unf[0];
    let mut b = CMatrix::zeros(i2n, r);
    let mut c = CMatrix::zeros(i3n, r);
    for k in 0..r {
        let m = CMatrix::from_fn(i2n, i3n, |p, q| rows[(k, p + i2n * q)]);
        let (s, u, v) = dominant_singular_pair(&m);
        b.set_column(k, &u);
        c.set_column(k, &(v.map(|x| x.conj()) * C64::from(s)));
    }
    Some([a, b, c])
}

fn random_init(dims: [usize; 3], r: usize, rng: &mut ChaCha20Rng) -> [CMatrix; 3] {
    [
        CMatrix::from_fn(dims[0], r, |_, _| complex_normal(1.0, rng)),
        CMatrix::from_fn(dims[1], r, |_, _| complex_normal(1.0, rng)),
        CMatrix::from_fn(dims[2], r, |_, _| complex_normal(1.0, rng)),
    ]
}

/// Rank-R CP decomposition by alternating least squares.
///
/// Starts from a slice-eigendecomposition initialization when the shape
/// allows it and falls back to random restarts when ALS does not converge.
/// A result that never converges is returned with `converged = false`.
pub fn cp_decompose(t: &ComplexTensor3, rank: usize, opts: &CpOptions) -> Result<CpFactors> {
    let dims = t.dims();
    let max_rank = (dims[1] * dims[2]).min(dims[0] * dims[2]).min(dims[0] * dims[1]);
    if rank == 0 || rank > max_rank {
        return Err(Error::InvalidInput(format!(
            "rank {rank} outside [1, {max_rank}] for dims {dims:?}"
        )));
    }
    if t.norm() == 0.0 {
        let unit = |n: usize| CMatrix::from_fn(n, rank, |i, j| C64::new((i == j % n) as u8 as f64, 0.0));
        return Ok(CpFactors {
            u1: unit(dims[0]),
            u2: unit(dims[1]),
            u3: unit(dims[2]),
            weights: CVector::zeros(rank),
            residual: 0.0,
            converged: true,
            iterations: 0,
        });
    }
    let unf = [t.unfold(1)?, t.unfold(2)?, t.unfold(3)?];
    let mut rng = ChaCha20Rng::seed_from_u64(opts.seed);
    let mut best: Option<AlsRun> = None;
    let mut attempts = 0;
    while attempts <= opts.restarts {
        let init = if attempts == 0 {
            gevd_init(t, &unf, rank, &mut rng).unwrap_or_else(|| random_init(dims, rank, &mut rng))
        } else {
            random_init(dims, rank, &mut rng)
        };
        attempts += 1;
        let run = als(t, &unf, init, opts);
        let done = run.converged;
        if best.as_ref().is_none_or(|b| run.residual < b.residual) {
            best = Some(run);
        }
        if done {
            break;
        }
    }
    let best = best.expect("at least one attempt");
    let [a, b, c] = best.u;
    let (u, weights) = normalize([a, b, c], CVector::from_element(rank, C64::new(1.0, 0.0)));
    let [u1, u2, u3] = u;
    Ok(CpFactors {
        u1,
        u2,
        u3,
        weights,
        residual: best.residual,
        converged: best.converged,
        iterations: best.iterations,
    })
}
