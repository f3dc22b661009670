//! Independent numerical oracles for the test suites.
//!
//! Nothing here calls into the filter crates. Objectives are written from
//! their definitions and minimized by generic numeric routines (grid plus
//! golden section, exact coordinate descent), derivatives come from finite
//! differences, and the Kalman posterior from brute-force quadrature.

use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut StdRng) -> f64 {
    // Box-Muller; only used to build test instances.
    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn random_matrix(rng: &mut StdRng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| gaussian(rng))
}

pub fn random_vector(rng: &mut StdRng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| gaussian(rng))
}

/// Random SPD matrix with eigenvalues uniform in `[lo, hi]`.
pub fn random_spd(rng: &mut StdRng, d: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    let q = random_matrix(rng, d, d).qr().q();
    let eig = DVector::from_fn(d, |_, _| rng.random_range(lo..=hi));
    let mut m = &q * DMatrix::from_diagonal(&eig) * q.transpose();
    symmetrize(&mut m);
    m
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m = (&*m + t) * 0.5;
}

pub fn min_eig(m: &DMatrix<f64>) -> f64 {
    let mut s = m.clone();
    symmetrize(&mut s);
    s.symmetric_eigen().eigenvalues.min()
}

/// log det through LU, independent of any Cholesky path.
pub fn logdet(m: &DMatrix<f64>) -> f64 {
    m.clone().lu().determinant().ln()
}

pub fn inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().try_inverse().expect("invertible test matrix")
}

pub fn central_gradient<F: Fn(&DVector<f64>) -> f64>(
    f: F,
    x: &DVector<f64>,
    h: f64,
) -> DVector<f64> {
    DVector::from_fn(x.len(), |i, _| {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        (f(&xp) - f(&xm)) / (2.0 * h)
    })
}

pub fn central_hessian<F: Fn(&DVector<f64>) -> f64>(
    f: F,
    x: &DVector<f64>,
    h: f64,
) -> DMatrix<f64> {
    let n = x.len();
    let f0 = f(x);
    let shifted = |i: usize, si: f64, j: usize, sj: f64| {
        let mut z = x.clone();
        z[i] += si;
        z[j] += sj;
        f(&z)
    };
    let mut hess = DMatrix::zeros(n, n);
    for i in 0..n {
        hess[(i, i)] = (shifted(i, h, i, 0.0) - 2.0 * f0 + shifted(i, -h, i, 0.0)) / (h * h);
        for j in (i + 1)..n {
            let v = (shifted(i, h, j, h) - shifted(i, h, j, -h) - shifted(i, -h, j, h)
                + shifted(i, -h, j, -h))
                / (4.0 * h * h);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    hess
}

/// Minimize a unimodal-ish function on `[lo, hi]`: a uniform grid locates
/// the basin, golden section refines it.
pub fn grid_golden_min<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64) -> f64 {
    const GRID: usize = 400;
    let step = (hi - lo) / GRID as f64;
    let mut best = 0;
    let mut best_val = f64::INFINITY;
    for i in 0..=GRID {
        let v = f(lo + step * i as f64);
        if v < best_val {
            best_val = v;
            best = i;
        }
    }
    let mut a = lo + step * best.saturating_sub(1) as f64;
    let mut b = (lo + step * (best + 1) as f64).min(hi);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= 1e-15 * (1.0 + a.abs().max(b.abs())) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let mid = 0.5 * (a + b);
    // the grid end points can beat the interior when the minimum sits on the boundary
    [lo, hi, mid]
        .into_iter()
        .min_by(|x, y| f(*x).total_cmp(&f(*y)))
        .unwrap()
}

/// Minimize `lin . z + z^T quad z / 2` by exact cyclic coordinate descent.
pub fn coordinate_descent_quadratic(lin: &DVector<f64>, quad: &DMatrix<f64>) -> DVector<f64> {
    let n = lin.len();
    let mut z: DVector<f64> = DVector::zeros(n);
    for _ in 0..200_000 {
        let mut change = 0.0f64;
        for i in 0..n {
            let mut rest = lin[i];
            for j in 0..n {
                if j != i {
                    rest += quad[(i, j)] * z[j];
                }
            }
            let new: f64 = -rest / quad[(i, i)];
            change = change.max((new - z[i]).abs());
            z[i] = new;
        }
        if change <= 1e-15 * (1.0 + z.amax()) {
            break;
        }
    }
    z
}

/// Minimize `-log det S + Tr(S M)` over SPD `S` by exact coordinate descent
/// on the entries of a Cholesky factor `S = L L^T`.
///
/// The objective splits over columns `l_k` of `L` as
/// `-2 log l_kk + l_k^T M l_k`, each minimized coordinate-wise in closed form.
pub fn min_neg_logdet_plus_trace(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut l = DMatrix::zeros(n, n);
    for k in 0..n {
        let mut col: DVector<f64> = DVector::zeros(n);
        col[k] = 1.0 / m[(k, k)].sqrt();
        for _ in 0..200_000 {
            let mut change = 0.0f64;
            for i in k..n {
                let mut c = 0.0;
                for j in k..n {
                    if j != i {
                        c += m[(i, j)] * col[j];
                    }
                }
                let new: f64 = if i == k {
                    // -2 log x + M_kk x^2 + 2 c x
                    (-c + (c * c + 4.0 * m[(k, k)]).sqrt()) / (2.0 * m[(k, k)])
                } else {
                    -c / m[(i, i)]
                };
                change = change.max((new - col[i]).abs());
                col[i] = new;
            }
            if change <= 1e-15 * (1.0 + col.amax()) {
                break;
            }
        }
        l.set_column(k, &col);
    }
    &l * l.transpose()
}

/// Bound in `s` on `[0, s_prior]` whose minimizer is the closed-form `s` update.
pub fn s_bound(s: f64, r2: f64, a_hat: f64, s_prior: f64) -> f64 {
    0.25 * r2 * (-a_hat).exp() * s + 0.5 * s / s_prior - 0.5 * s.ln()
}

/// Quadratic bound in `a` valid on `[a_prev - m_a, a_prev + m_a]`.
pub fn a_bound(a: f64, r2: f64, a_prev: f64, s: f64, s_prior: f64, m_a: f64) -> f64 {
    let da = a - a_prev;
    0.5 * r2 * (-a_prev + 0.5 * s).exp() * (-da + 0.5 * m_a.exp() * da * da)
        + 0.5 * da * da / s_prior
        + 0.5 * a
}

/// Quadratic bound in `(b, Sigma)`.
#[allow(clippy::too_many_arguments)]
pub fn b_bound(
    b: &DVector<f64>,
    sigma: &DMatrix<f64>,
    b_prev: &DVector<f64>,
    sigma_prev: &DMatrix<f64>,
    rho_b: f64,
    grad: &DVector<f64>,
    hess: &DMatrix<f64>,
) -> f64 {
    let m = b.len();
    let db = b - b_prev;
    let weight = inverse(&(sigma_prev + DMatrix::identity(m, m) * rho_b)) + hess * 0.5;
    -0.5 * logdet(sigma)
        + 0.5 * grad.dot(&db)
        + 0.5 * ((sigma + &db * db.transpose()) * weight).trace()
}

/// KL terms that depend on the state moments, with `A` held fixed.
#[allow(clippy::too_many_arguments)]
pub fn state_objective(
    theta: &DVector<f64>,
    p: &DMatrix<f64>,
    a: &DMatrix<f64>,
    prior_mean: &DVector<f64>,
    x: &DVector<f64>,
    y: f64,
    a_hat: f64,
    s: f64,
) -> f64 {
    let dt = theta - prior_mean;
    let r = y - theta.dot(x);
    0.5 * ((p + &dt * dt.transpose()) * a).trace()
        + 0.5 * (r * r + x.dot(&(p * x))) * (-a_hat + 0.5 * s).exp()
        - 0.5 * logdet(p)
}

/// Posterior mean and variance of a scalar state after one observation,
/// by 2-d quadrature over `(theta_prev, theta)`:
/// `theta_prev ~ N(m, p)`, `theta = k theta_prev + N(0, q)`, `y = x theta + N(0, sigma2)`.
pub fn scalar_posterior_quadrature(
    m: f64,
    p: f64,
    k: f64,
    q: f64,
    sigma2: f64,
    x: f64,
    y: f64,
) -> (f64, f64) {
    let prior_sd = (k * k * p + q).sqrt();
    let centre = k * m;
    let half = 12.0 * prior_sd;
    let n_out = 1201;
    let n_in = 801;
    let prev_sd = p.sqrt();
    let log_n = |v: f64, mu: f64, var: f64| -0.5 * (v - mu) * (v - mu) / var;
    let mut z = 0.0;
    let mut m1 = 0.0;
    let mut m2 = 0.0;
    for i in 0..n_out {
        let th = centre - half + 2.0 * half * i as f64 / (n_out - 1) as f64;
        let lik = log_n(y, x * th, sigma2).exp();
        let mut marg = 0.0;
        for j in 0..n_in {
            let tp = m - 10.0 * prev_sd + 20.0 * prev_sd * j as f64 / (n_in - 1) as f64;
            marg += (log_n(tp, m, p) + log_n(th, k * tp, q)).exp();
        }
        let w = lik * marg;
        z += w;
        m1 += w * th;
        m2 += w * th * th;
    }
    let mean = m1 / z;
    (mean, m2 / z - mean * mean)
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}


/// Reference `phi`: `0` below zero, `log(1 + b)` above.
pub fn phi_ref(b: f64) -> f64 {
    if b < 0.0 {
        0.0
    } else {
        (1.0 + b).ln()
    }
}

/// `log det(KPK + D) + Tr(B (KPK + D)^-1)` with `D = diag(q)`.
pub fn psi_ref(kpk: &DMatrix<f64>, big_b: &DMatrix<f64>, q: &DVector<f64>) -> f64 {
    let c = kpk + DMatrix::from_diagonal(q);
    logdet(&c) + (big_b * inverse(&c)).trace()
}

/// Random instance of the `psi` expansion problem.
#[derive(Debug, Clone)]
pub struct PsiCase {
    pub kpk: DMatrix<f64>,
    pub big_b: DMatrix<f64>,
    /// Expansion point, every coordinate in `(0.1, 3)`.
    pub b: DVector<f64>,
}

pub fn psi_case(rng: &mut StdRng, d: usize, latent_dim: usize) -> PsiCase {
    let k = random_matrix(rng, d, d) * (1.0 / (d as f64).sqrt());
    let p = random_spd(rng, d, 0.05, 2.0);
    let mut kpk = &k * p * k.transpose();
    symmetrize(&mut kpk);
    let shift = random_vector(rng, d) * 0.7;
    let mut big_b = random_spd(rng, d, 0.01, 1.5) + &shift * shift.transpose();
    symmetrize(&mut big_b);
    let b = DVector::from_fn(latent_dim, |_, _| rng.random_range(0.1..3.0));
    PsiCase { kpk, big_b, b }
}

/// Random instance of the `(b, Sigma)` bound.
#[derive(Debug, Clone)]
pub struct BCase {
    pub b_prev: DVector<f64>,
    pub sigma_prev: DMatrix<f64>,
    pub rho_b: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

pub fn b_case(rng: &mut StdRng, m: usize) -> BCase {
    let b_prev = DVector::from_fn(m, |_, _| rng.random_range(0.05..2.0));
    let sigma_prev = random_spd(rng, m, 0.02, 1.0);
    let rho_b = (-rng.random_range(1.0..10.0f64)).exp();
    let grad = random_vector(rng, m);
    let g = random_matrix(rng, m, m) * 0.5;
    let mut hess = &g * g.transpose();
    symmetrize(&mut hess);
    BCase {
        b_prev,
        sigma_prev,
        rho_b,
        grad,
        hess,
    }
}

/// Random scalar instance of the `(a, s)` bounds.
#[derive(Debug, Clone, Copy)]
pub struct ACase {
    pub r2: f64,
    pub a_prev: f64,
    pub s_prev: f64,
    pub rho_a: f64,
}

impl ACase {
    pub fn s_prior(&self) -> f64 {
        self.s_prev + self.rho_a
    }

    pub fn m_a(&self) -> f64 {
        3.0 * self.s_prev
    }
}

pub fn a_case(rng: &mut StdRng) -> ACase {
    ACase {
        r2: (rng.random_range(-4.0..3.0f64)).exp(),
        a_prev: rng.random_range(-2.0..2.0),
        s_prev: (rng.random_range(-5.0..0.0f64)).exp(),
        rho_a: (-rng.random_range(1.0..10.0f64)).exp(),
    }
}
