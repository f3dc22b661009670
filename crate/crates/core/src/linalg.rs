//! Small dense helpers for symmetric positive (semi)definite matrices.
//!
//! Every SPD inverse in the crate goes through [`spd_inverse`], which keeps a
//! per-thread count of calls so the per-step inversion budget of the filter
//! can be checked.

use std::cell::Cell;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative jitter added once to the diagonal when a Cholesky factorization fails.
pub const JITTER_SCALE: f64 = 1e-10;

thread_local! {
    static INVERSIONS: Cell<u64> = const { Cell::new(0) };
}

/// Number of [`spd_inverse`] calls made on the current thread.
pub fn inversion_count() -> u64 {
    INVERSIONS.with(Cell::get)
}

pub fn reset_inversion_count() {
    INVERSIONS.with(|c| c.set(0));
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn symmetrized(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    symmetrize(&mut out);
    out
}

fn cholesky_with_jitter(m: &DMatrix<f64>) -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let sym = symmetrized(m);
    if let Some(ch) = sym.clone().cholesky() {
        return Some(ch);
    }
    let d = sym.nrows().max(1);
    let jitter = JITTER_SCALE * sym.trace().abs() / d as f64;
    if !(jitter > 0.0) {
        return None;
    }
    let mut jittered = sym;
    for i in 0..jittered.nrows() {
        jittered[(i, i)] += jitter;
    }
    jittered.cholesky()
}

/// Inverse of a symmetric positive definite matrix.
///
/// Uses a Cholesky factorization of the symmetrized input. If that fails the
/// diagonal is shifted once by `JITTER_SCALE * trace / d` and the
/// factorization retried; a second failure is reported as singular.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    INVERSIONS.with(|c| c.set(c.get() + 1));
    if m.nrows() != m.ncols() {
        return Err(Error::dim("spd_inverse (square)", m.nrows(), m.ncols()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("spd_inverse (non-finite entries)"));
    }
    let ch = cholesky_with_jitter(m).ok_or(Error::Singular("spd_inverse"))?;
    let mut inv = ch.inverse();
    symmetrize(&mut inv);
    Ok(inv)
}

/// log det of an SPD matrix (same factorization contract as [`spd_inverse`], not counted).
pub fn spd_logdet(m: &DMatrix<f64>) -> Result<f64> {
    let ch = cholesky_with_jitter(m).ok_or(Error::Singular("spd_logdet"))?;
    Ok(2.0 * ch.l().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

/// A square root factor `L` with `L Lᵀ = m` for a symmetric PSD matrix.
///
/// Cholesky when `m` is positive definite, otherwise an eigen decomposition
/// with negative eigenvalues clipped to zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = symmetrized(m);
    if let Some(ch) = sym.clone().cholesky() {
        return ch.l();
    }
    let eig = sym.symmetric_eigen();
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots)
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetrized(m)
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Symmetric within `1e-12` relative and eigenvalues at least `-1e-10 * |trace|`.
pub fn is_psd(m: &DMatrix<f64>) -> bool {
    if m.nrows() != m.ncols() || m.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * scale {
                return false;
            }
        }
    }
    n == 0 || min_eigenvalue(m) >= -1e-10 * m.trace().abs().max(f64::MIN_POSITIVE)
}

/// `x x^T`
pub fn outer(x: &DVector<f64>) -> DMatrix<f64> {
    x * x.transpose()
}

/// `x^T M x`
pub fn quad_form(m: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    x.dot(&(m * x))
}
