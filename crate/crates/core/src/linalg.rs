//! Small complex linear-algebra helpers shared by the estimators.

use nalgebra::{DMatrix, DVector, Dyn, SVD};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub const J: C64 = C64 { re: 0.0, im: 1.0 };

#[inline]
pub fn cis(phase: f64) -> C64 {
    C64::from_polar(1.0, phase)
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    CMatrix::from_fn(ar * br, ac * bc, |i, j| {
        a[(i / br, j / bc)] * b[(i % br, j % bc)]
    })
}

pub fn kron_vec(a: &CVector, b: &CVector) -> CVector {
    let n = b.len();
    CVector::from_fn(a.len() * n, |i, _| a[i / n] * b[i % n])
}

/// Vandermonde steering vector `[1, e^{jω}, …, e^{j(n-1)ω}]ᵀ`.
pub fn vandermonde(n: usize, omega: f64) -> CVector {
    CVector::from_fn(n, |i, _| cis(i as f64 * omega))
}

/// Thin SVD, singular values in nonincreasing order. Computed with faer:
/// nalgebra's complex SVD returns inaccurate factors for some
/// rank-deficient inputs.
pub fn svd(m: &CMatrix, compute_u: bool, compute_v: bool) -> SVD<C64, Dyn, Dyn> {
    let (r, c) = m.shape();
    let k = r.min(c);
    if k == 0 || m.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return m.clone().svd(compute_u, compute_v);
    }
    let fm = faer::Mat::<C64>::from_fn(r, c, |i, j| m[(i, j)]);
    let Ok(f) = fm.thin_svd() else {
        return m.clone().svd(compute_u, compute_v);
    };
    let s = f.S().column_vector();
    let singular_values = DVector::from_fn(k, |i, _| s[i].re);
    let u = compute_u.then(|| CMatrix::from_fn(r, k, |i, j| f.U()[(i, j)]));
    let v_t = compute_v.then(|| CMatrix::from_fn(k, c, |i, j| f.V()[(j, i)].conj()));
    SVD { u, v_t, singular_values }
}

/// Singular values in nonincreasing order.
pub fn singular_values(m: &CMatrix) -> DVector<f64> {
    svd(m, false, false).singular_values
}

/// Pseudo-inverse with singular values below `tol` treated as zero.
pub fn pinv(m: &CMatrix, tol: f64) -> Option<CMatrix> {
    svd(m, true, true).pseudo_inverse(tol).ok()
}

/// Moore-Penrose pseudo-inverse; errors when the numerical rank is below the column count.
pub fn pinv_full_rank(m: &CMatrix, what: &str) -> Result<CMatrix> {
    let svd = svd(m, true, true);
    let smax = svd.singular_values.max();
    let tol = smax * 1e-10 * (m.nrows().max(m.ncols()) as f64);
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if smax == 0.0 || rank < m.ncols().min(m.nrows()) || rank < m.ncols() {
        return Err(Error::Singular(format!("{what}: rank {rank} < {}", m.ncols())));
    }
    svd.pseudo_inverse(tol)
        .map_err(|e| Error::Singular(format!("{what}: {e}")))
}

/// Eigenvalues of a small square complex matrix.
pub fn eigenvalues(m: &CMatrix) -> Result<Vec<C64>> {
    let n = m.nrows();
    match n {
        0 => Ok(vec![]),
        1 => Ok(vec![m[(0, 0)]]),
        2 => {
            let tr = m[(0, 0)] + m[(1, 1)];
            let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
            let disc = (tr * tr - 4.0 * det).sqrt();
            Ok(vec![(tr + disc) * 0.5, (tr - disc) * 0.5])
        }
        _ => m
            .clone()
            .schur()
            .eigenvalues()
            .map(|v| v.iter().copied().collect())
            .ok_or_else(|| Error::Singular("eigenvalue extraction failed".into())),
    }
}

/// Column-wise Kronecker (Khatri-Rao) product; column `r` is `a_r ⊗ b_r`.
pub fn khatri_rao(a: &CMatrix, b: &CMatrix) -> CMatrix {
    assert_eq!(a.ncols(), b.ncols());
    let br = b.nrows();
    CMatrix::from_fn(a.nrows() * br, a.ncols(), |i, r| a[(i / br, r)] * b[(i % br, r)])
}

/// Unit eigenvector of `m` for the (approximate) eigenvalue `lambda`.
pub fn eigenvector(m: &CMatrix, lambda: C64) -> CVector {
    let n = m.nrows();
    let shifted = m - CMatrix::identity(n, n) * lambda;
    let svd = svd(&shifted, false, true);
    let v_t = svd.v_t.expect("requested V");
    let (imin, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc });
    v_t.row(imin).adjoint()
}

/// Eigen-decomposition of a small diagonalizable matrix; columns of the
/// returned matrix are unit eigenvectors.
pub fn eigen_decomposition(m: &CMatrix) -> Result<(Vec<C64>, CMatrix)> {
    let vals = eigenvalues(m)?;
    let n = m.nrows();
    let mut vecs = CMatrix::zeros(n, n);
    for (i, &l) in vals.iter().enumerate() {
        vecs.set_column(i, &eigenvector(m, l));
    }
    Ok((vals, vecs))
}

/// Dominant singular triplet `(σ, u, v)` with `m ≈ σ u vᴴ`.
pub fn dominant_singular_pair(m: &CMatrix) -> (f64, CVector, CVector) {
    let svd = svd(m, true, true);
    let (imax, smax) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, -1.0), |acc, (i, &s)| if s > acc.1 { (i, s) } else { acc });
    let u = svd.u.expect("requested U").column(imax).into_owned();
    let v = svd.v_t.expect("requested V").row(imax).adjoint();
    (smax, u, v)
}

/// Orthogonal projector onto the complement of `span{vs}` (Gram–Schmidt).
pub fn complement_projector(dim: usize, vs: &[CVector]) -> CMatrix {
    let mut basis: Vec<CVector> = Vec::new();
    for v in vs {
        let mut w = v.clone();
        for b in &basis {
            let c = b.dotc(&w);
            w -= b * c;
        }
        let n = w.norm();
        let scale = v.norm().max(1e-300);
        if n > 1e-12 * scale {
            basis.push(w / C64::from(n));
        }
    }
    let mut p = CMatrix::identity(dim, dim);
    for b in &basis {
        p -= b * b.adjoint();
    }
    p
}

/// Wraps an angle to `(-π, π]`.
pub fn wrap_pi(x: f64) -> f64 {
    use std::f64::consts::PI;
    let mut y = x.rem_euclid(2.0 * PI);
    if y > PI {
        y -= 2.0 * PI;
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kron_shapes_and_entries() {
        let a = CMatrix::from_row_slice(2, 1, &[C64::new(1.0, 0.0), C64::new(2.0, 0.0)]);
        let b = CMatrix::from_row_slice(1, 2, &[C64::new(0.0, 1.0), C64::new(3.0, 0.0)]);
        let k = kron(&a, &b);
        assert_eq!(k.shape(), (2, 2));
        assert_eq!(k[(1, 1)], C64::new(6.0, 0.0));
        assert_eq!(k[(1, 0)], C64::new(0.0, 2.0));
    }

    #[test]
    fn projector_annihilates_inputs() {
        let v1 = vandermonde(5, 0.3);
        let v2 = vandermonde(5, -1.2) * C64::new(3.0, 1.0);
        let p = complement_projector(5, &[v1.clone(), v2.clone()]);
        assert!((&p * v1).norm() < 1e-12);
        assert!((&p * v2).norm() < 1e-12);
        assert!((&p * &p - &p).norm() < 1e-12);
    }

    #[test]
    fn eig2_matches_trace_and_det() {
        let m = CMatrix::from_row_slice(
            2,
            2,
            &[C64::new(1.0, 2.0), C64::new(0.5, 0.0), C64::new(-1.0, 0.3), C64::new(0.2, -1.0)],
        );
        let e = eigenvalues(&m).unwrap();
        let tr = m[(0, 0)] + m[(1, 1)];
        let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
        assert!((e[0] + e[1] - tr).norm() < 1e-12);
        assert!((e[0] * e[1] - det).norm() < 1e-12);
    }

    #[test]
    fn eigen_decomposition_reconstructs() {
        let m = CMatrix::from_row_slice(
            3,
            3,
            &[
                C64::new(1.0, 0.5), C64::new(0.2, 0.0), C64::new(0.0, -0.3),
                C64::new(-0.4, 0.1), C64::new(2.0, 0.0), C64::new(0.3, 0.3),
                C64::new(0.1, 0.0), C64::new(0.0, 0.7), C64::new(-1.0, -1.0),
            ],
        );
        let (vals, vecs) = eigen_decomposition(&m).unwrap();
        for (i, l) in vals.iter().enumerate() {
            let v = vecs.column(i);
            assert!((&m * v - v * *l).norm() < 1e-10);
        }
    }

    #[test]
    fn khatri_rao_columns_are_kronecker() {
        let a = CMatrix::from_fn(3, 2, |i, j| C64::new(i as f64, j as f64 + 1.0));
        let b = CMatrix::from_fn(2, 2, |i, j| C64::new(1.0 + j as f64, -(i as f64)));
        let k = khatri_rao(&a, &b);
        for r in 0..2 {
            let e = kron_vec(&a.column(r).into_owned(), &b.column(r).into_owned());
            assert!((k.column(r) - e).norm() < 1e-15);
        }
    }

    #[test]
    fn wrap_is_half_open() {
        use std::f64::consts::PI;
        assert!((wrap_pi(-PI) - PI).abs() < 1e-15);
        assert!((wrap_pi(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
    }
}
