//! The map from the latent `b` to the state-noise covariance `Q = f(b)`, and
//! the value, gradient and quadratic upper bound of
//!
//! ```text
//! psi(b) = log det C(b) + Tr(B C(b)^-1),   C(b) = K P K^T + f(b)
//! ```
//!
//! around an expansion point.
//!
//! `phi(b)` is `0` for `b < 0` and `log(1 + b)` otherwise. It is not
//! differentiable at `0`; the derivative helpers use the right limits there
//! (`phi'(0) = 1`, `phi''(0) = -1`).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{spd_inverse, spd_logdet};

#[inline]
pub fn phi(b: f64) -> f64 {
    if b < 0.0 {
        0.0
    } else {
        b.ln_1p()
    }
}

#[inline]
pub fn phi_d1(b: f64) -> f64 {
    if b < 0.0 {
        0.0
    } else {
        1.0 / (1.0 + b)
    }
}

#[inline]
pub fn phi_d2(b: f64) -> f64 {
    if b < 0.0 {
        0.0
    } else {
        -1.0 / ((1.0 + b) * (1.0 + b))
    }
}

/// Inverse of `phi` on its increasing branch: the latent giving a variance `q >= 0`.
#[inline]
pub fn phi_inverse(q: f64) -> f64 {
    q.exp_m1()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransformKind {
    /// `f(b) = phi(b) I` with a one-dimensional latent.
    Scalar,
    /// `f(b) = diag(phi(b_1), ..., phi(b_d))`.
    Diagonal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseTransform {
    pub kind: TransformKind,
    /// State dimension `d`.
    pub dim: usize,
}

impl NoiseTransform {
    pub fn new(kind: TransformKind, dim: usize) -> Self {
        assert!(dim > 0, "state dimension must be positive");
        NoiseTransform { kind, dim }
    }

    pub fn scalar(dim: usize) -> Self {
        Self::new(TransformKind::Scalar, dim)
    }

    pub fn diagonal(dim: usize) -> Self {
        Self::new(TransformKind::Diagonal, dim)
    }

    /// Dimension of the latent `b`.
    pub fn latent_dim(&self) -> usize {
        match self.kind {
            TransformKind::Scalar => 1,
            TransformKind::Diagonal => self.dim,
        }
    }

    fn check_latent(&self, b: &DVector<f64>) -> Result<()> {
        if b.len() != self.latent_dim() {
            return Err(Error::dim("noise latent", self.latent_dim(), b.len()));
        }
        Ok(())
    }

    fn check_square(&self, what: &'static str, m: &DMatrix<f64>) -> Result<()> {
        if m.nrows() != self.dim || m.ncols() != self.dim {
            return Err(Error::dim(what, self.dim, m.nrows().max(m.ncols())));
        }
        Ok(())
    }

    /// Diagonal of `f(b)`.
    pub fn diag(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_latent(b)?;
        Ok(match self.kind {
            TransformKind::Scalar => DVector::from_element(self.dim, phi(b[0])),
            TransformKind::Diagonal => b.map(phi),
        })
    }

    /// `f(b)` as a `d x d` diagonal matrix.
    pub fn apply(&self, b: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(DMatrix::from_diagonal(&self.diag(b)?))
    }

    /// `m + f(b)` without materializing `f(b)`.
    pub fn add_to(&self, m: &DMatrix<f64>, b: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_square("covariance", m)?;
        let diag = self.diag(b)?;
        let mut out = m.clone();
        for i in 0..self.dim {
            out[(i, i)] += diag[i];
        }
        Ok(out)
    }

    /// `psi(b) = log det(KPK + f(b)) + Tr(B (KPK + f(b))^-1)`.
    pub fn psi_value(
        &self,
        b: &DVector<f64>,
        big_b: &DMatrix<f64>,
        kpk: &DMatrix<f64>,
    ) -> Result<f64> {
        self.check_square("B", big_b)?;
        let c = self.add_to(kpk, b)?;
        let c_inv = spd_inverse(&c)?;
        Ok(spd_logdet(&c)? + (big_b * c_inv).trace())
    }

    pub fn psi_gradient(
        &self,
        b_hat: &DVector<f64>,
        big_b: &DMatrix<f64>,
        c: &DMatrix<f64>,
    ) -> Result<DVector<f64>> {
        Ok(PsiExpansion::new(*self, b_hat, big_b, c)?.gradient())
    }

    pub fn psi_hessian_bound(
        &self,
        b_hat: &DVector<f64>,
        big_b: &DMatrix<f64>,
        c: &DMatrix<f64>,
    ) -> Result<DMatrix<f64>> {
        PsiExpansion::new(*self, b_hat, big_b, c)?.hessian_bound()
    }
}

/// First and second order information of `psi` at an expansion point `b_hat`,
/// sharing a single inversion of `C = KPK + f(b_hat)`.
#[derive(Debug, Clone)]
pub struct PsiExpansion {
    transform: NoiseTransform,
    b_hat: DVector<f64>,
    c_inv: DMatrix<f64>,
    /// `C^-1 B C^-1`
    w: DMatrix<f64>,
}

impl PsiExpansion {
    pub fn new(
        transform: NoiseTransform,
        b_hat: &DVector<f64>,
        big_b: &DMatrix<f64>,
        c: &DMatrix<f64>,
    ) -> Result<Self> {
        transform.check_latent(b_hat)?;
        transform.check_square("B", big_b)?;
        transform.check_square("C", c)?;
        let c_inv = spd_inverse(c)?;
        let mut w = &c_inv * big_b * &c_inv;
        crate::linalg::symmetrize(&mut w);
        Ok(PsiExpansion {
            transform,
            b_hat: b_hat.clone(),
            c_inv,
            w,
        })
    }

    pub fn c_inv(&self) -> &DMatrix<f64> {
        &self.c_inv
    }

    pub fn gradient(&self) -> DVector<f64> {
        match self.transform.kind {
            TransformKind::Scalar => {
                let tr = self.c_inv.trace() - self.w.trace();
                DVector::from_element(1, tr * phi_d1(self.b_hat[0]))
            }
            TransformKind::Diagonal => DVector::from_fn(self.transform.dim, |j, _| {
                (self.c_inv[(j, j)] - self.w[(j, j)]) * phi_d1(self.b_hat[j])
            }),
        }
    }

    /// Quadratic upper bound `H` on the Hessian of `psi` at `b_hat`.
    ///
    /// Requires `f(b_hat)` positive definite, i.e. every latent coordinate
    /// strictly positive.
    pub fn hessian_bound(&self) -> Result<DMatrix<f64>> {
        if let Some(j) = self.b_hat.iter().position(|&v| !(v > 0.0)) {
            return Err(Error::Precondition(format!(
                "Hessian bound needs a strictly positive latent, coordinate {j} is {}",
                self.b_hat[j]
            )));
        }
        Ok(match self.transform.kind {
            TransformKind::Scalar => {
                let b = self.b_hat[0];
                let d1 = phi_d1(b);
                let h =
                    -self.w.trace() * phi_d2(b) + 2.0 * (&self.c_inv * &self.w).trace() * d1 * d1;
                DMatrix::from_element(1, 1, h)
            }
            TransformKind::Diagonal => {
                let d = self.transform.dim;
                let d1 = self.b_hat.map(phi_d1);
                let mut h = DMatrix::from_fn(d, d, |j, k| {
                    2.0 * self.w[(j, k)] * self.c_inv[(j, k)] * d1[j] * d1[k]
                });
                for j in 0..d {
                    h[(j, j)] -= self.w[(j, j)] * phi_d2(self.b_hat[j]);
                }
                crate::linalg::symmetrize(&mut h);
                h
            }
        })
    }
}
