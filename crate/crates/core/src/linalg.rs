//! Small dense complex linear-algebra helpers shared by the kernel, law and
//! solver modules.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub const I: C64 = C64::new(0.0, 1.0);

pub fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// `(M + M*) / 2`, Hermitian by construction.
pub fn hermitian_part(m: &CMat) -> CMat {
    let n = m.nrows();
    CMat::from_fn(n, n, |i, j| {
        if i == j {
            c(m[(i, i)].re)
        } else {
            (m[(i, j)] + m[(j, i)].conj()) * 0.5
        }
    })
}

/// `(M − M*) / 2i`, the Hermitian "imaginary part" of a matrix.
pub fn imaginary_part(m: &CMat) -> CMat {
    let n = m.nrows();
    CMat::from_fn(n, n, |i, j| {
        if i == j {
            c(m[(i, i)].im)
        } else {
            (m[(i, j)] - m[(j, i)].conj()) / (I * 2.0)
        }
    })
}

/// Smallest and largest eigenvalue of a Hermitian matrix.
pub fn hermitian_eig_range(h: &CMat) -> (f64, f64) {
    let n = h.nrows();
    if n == 1 {
        return (h[(0, 0)].re, h[(0, 0)].re);
    }
    if is_diagonal(h) {
        let d = (0..n).map(|i| h[(i, i)].re);
        return d.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
            (lo.min(x), hi.max(x))
        });
    }
    let ev = h.clone().symmetric_eigenvalues();
    ev.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        })
}

pub fn lambda_min(h: &CMat) -> f64 {
    hermitian_eig_range(h).0
}

pub fn lambda_max(h: &CMat) -> f64 {
    hermitian_eig_range(h).1
}

/// Spectral (operator 2-) norm.
pub fn op_norm(m: &CMat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    if m.nrows() == 1 && m.ncols() == 1 {
        return m[(0, 0)].norm();
    }
    if m.is_square() && is_diagonal(m) {
        return (0..m.nrows()).map(|i| m[(i, i)].norm()).fold(0.0, f64::max);
    }
    m.clone().singular_values().max()
}

pub fn max_abs(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn is_diagonal(m: &CMat) -> bool {
    let n = m.nrows();
    for j in 0..m.ncols() {
        for i in 0..n {
            if i != j && m[(i, j)] != C64::new(0.0, 0.0) {
                return false;
            }
        }
    }
    true
}

/// Returns `Some(a)` when `m == a·I` exactly.
pub fn scalar_identity(m: &CMat) -> Option<C64> {
    if !m.is_square() || m.nrows() == 0 || !is_diagonal(m) {
        return None;
    }
    let a = m[(0, 0)];
    (1..m.nrows()).all(|i| m[(i, i)] == a).then_some(a)
}

pub fn commutator(a: &CMat, b: &CMat) -> CMat {
    a * b - b * a
}

pub fn is_finite(m: &CMat) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Inverse, with a cheap path for diagonal matrices.
pub fn inverse(m: &CMat, what: &str) -> Result<CMat> {
    let n = m.nrows();
    if is_diagonal(m) {
        let mut out = CMat::zeros(n, n);
        for i in 0..n {
            let d = m[(i, i)];
            if d.norm() == 0.0 {
                return Err(Error::Singular(what.to_string()));
            }
            out[(i, i)] = d.inv();
        }
        return Ok(out);
    }
    let inv = m
        .clone()
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::Singular(what.to_string()))?;
    if !is_finite(&inv) {
        return Err(Error::Singular(what.to_string()));
    }
    Ok(inv)
}

/// `f(H)` for Hermitian `H` through its eigendecomposition.
pub fn hermitian_function(h: &CMat, f: impl Fn(f64) -> f64) -> CMat {
    let n = h.nrows();
    if is_diagonal(h) {
        return CMat::from_fn(n, n, |i, j| if i == j { c(f(h[(i, i)].re)) } else { C64::new(0.0, 0.0) });
    }
    let eig = h.clone().symmetric_eigen();
    let q = &eig.eigenvectors;
    let d = CMat::from_diagonal(&DVector::from_iterator(
        n,
        eig.eigenvalues.iter().map(|&x| c(f(x))),
    ));
    q * d * q.adjoint()
}

pub fn hermitian_sqrt(h: &CMat) -> CMat {
    hermitian_function(h, |x| x.max(0.0).sqrt())
}

/// Euclidean norm of a vector.
pub fn vnorm(v: &CVec) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Largest relative asymmetry `‖M − M*‖_max`.
pub fn asymmetry(m: &CMat) -> f64 {
    max_abs(&(m - m.adjoint()))
}

pub fn real_matrix(rows: usize, cols: usize, data: &[f64]) -> CMat {
    CMat::from_row_iterator(rows, cols, data.iter().map(|&x| c(x)))
}
