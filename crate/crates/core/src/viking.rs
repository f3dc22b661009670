//! Variational Bayesian filter with tracked noise variances.
//!
//! The model is
//!
//! ```text
//! theta_t = K theta_{t-1} + eta_t,   eta_t ~ N(0, f(b_t))
//! y_t     = theta_t . x_t + eps_t,   eps_t ~ N(0, exp(a_t))
//! a_t - a_{t-1} ~ N(0, rho_a),       b_t - b_{t-1} ~ N(0, rho_b I)
//! ```
//!
//! and each step fits the factorized approximation
//! `N(theta_hat, P) N(a_hat, s) N(b_hat, Sigma)` of the posterior. The state
//! moments are the exact KL minimizer given the variance beliefs; `(a_hat, s)`
//! and `(b_hat, Sigma)` minimize second-order upper bounds of the KL, in
//! closed form. The updates alternate `n_iter` times per step.
//!
//! Per pass the filter performs `n_mc + 1` SPD inversions to estimate
//! `A^-1 = E[(K P K^T + f(b))^-1]^-1` and, when `b` is learned, three more:
//! `C^-1`, `(Sigma_prev + rho_b I)^-1` and the updated `Sigma`.

use nalgebra::{DMatrix, DVector};

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::kalman::GaussianState;
use crate::linalg::{is_psd, outer, psd_sqrt, quad_form, spd_inverse, symmetrize, symmetrized};
use crate::rng::{standard_normal, stream_rng, Rng, Stream};
use crate::trace::{accumulate_second_half, StepRecord};
use crate::transforms::{phi_inverse, NoiseTransform, PsiExpansion};

/// Lower bound applied to learned `b_hat` coordinates so `f(b_hat)` stays
/// positive definite at the next expansion point.
pub const B_FLOOR: f64 = 1e-8;
/// Lower bound on the half-width `M_a = 3 s` of the trust interval for `a_hat`.
pub const MA_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct VikingHyper {
    /// Random-walk variance of `a`.
    pub rho_a: f64,
    /// Random-walk variance of each coordinate of `b`.
    pub rho_b: f64,
    /// Monte-Carlo draws per estimate of `A`.
    pub n_mc: usize,
    /// Alternating passes per step.
    pub n_iter: usize,
    pub learn_a: bool,
    pub learn_b: bool,
    pub transform: NoiseTransform,
    /// State transition matrix `K`.
    pub transition: DMatrix<f64>,
}

impl VikingHyper {
    /// Defaults: `rho_a = e^-9`, `rho_b = e^-6`, `n_mc = 10`, two passes, both
    /// variances learned.
    pub fn new(transform: NoiseTransform, transition: DMatrix<f64>) -> Self {
        VikingHyper {
            rho_a: (-9.0f64).exp(),
            rho_b: (-6.0f64).exp(),
            n_mc: 10,
            n_iter: 2,
            learn_a: true,
            learn_b: true,
            transform,
            transition,
        }
    }

    pub fn dim(&self) -> usize {
        self.transform.dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_mc == 0 {
            return Err(Error::InvalidArgument("n_mc must be at least 1".into()));
        }
        if self.n_iter == 0 {
            return Err(Error::InvalidArgument("n_iter must be at least 1".into()));
        }
        if !(self.rho_a >= 0.0) || !(self.rho_b >= 0.0) {
            return Err(Error::InvalidArgument(
                "rho_a and rho_b must be nonnegative".into(),
            ));
        }
        let d = self.dim();
        if self.transition.nrows() != d || self.transition.ncols() != d {
            return Err(Error::dim("transition matrix", d, self.transition.nrows()));
        }
        Ok(())
    }
}

/// Gaussian beliefs on the noise latents: `a ~ N(a_hat, s)`, `b ~ N(b_hat, Sigma)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceBeliefs {
    pub a_hat: f64,
    pub s: f64,
    pub b_hat: DVector<f64>,
    pub sigma: DMatrix<f64>,
}

impl VarianceBeliefs {
    pub fn validate(&self, transform: &NoiseTransform) -> Result<()> {
        let m = transform.latent_dim();
        if self.b_hat.len() != m {
            return Err(Error::dim("b_hat", m, self.b_hat.len()));
        }
        if self.sigma.nrows() != m || self.sigma.ncols() != m {
            return Err(Error::dim("Sigma", m, self.sigma.nrows()));
        }
        if !(self.s >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "s must be nonnegative, got {}",
                self.s
            )));
        }
        if !is_psd(&self.sigma) {
            return Err(Error::InvalidArgument("Sigma must be symmetric PSD".into()));
        }
        Ok(())
    }
}

/// Starting point of a filter run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VikingInit {
    /// `P_0 = p0 I`, with `theta_0 = 0`.
    pub p0: f64,
    pub a0: f64,
    pub s0: f64,
    /// Each active diagonal entry of `f(b_0)`.
    pub q0: f64,
    /// `Sigma_0 = sigma0 I`.
    pub sigma0: f64,
}

impl Default for VikingInit {
    fn default() -> Self {
        VikingInit {
            p0: 1.0,
            a0: 0.0,
            s0: 0.1,
            q0: 0.1,
            sigma0: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VikingState {
    pub state: GaussianState,
    pub beliefs: VarianceBeliefs,
    /// Number of completed steps.
    pub step_index: usize,
    seed: u64,
    rng: Rng,
}

impl VikingState {
    pub fn new(state: GaussianState, beliefs: VarianceBeliefs, seed: u64) -> Self {
        VikingState {
            state,
            beliefs,
            step_index: 0,
            seed,
            rng: stream_rng(seed, Stream::Filter),
        }
    }

    pub fn initial(init: &VikingInit, transform: &NoiseTransform, seed: u64) -> Self {
        let d = transform.dim;
        let m = transform.latent_dim();
        let beliefs = VarianceBeliefs {
            a_hat: init.a0,
            s: init.s0,
            b_hat: DVector::from_element(m, phi_inverse(init.q0)),
            sigma: DMatrix::identity(m, m) * init.sigma0,
        };
        Self::new(GaussianState::isotropic(d, init.p0), beliefs, seed)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Flat numeric record: `d m mean P(row-major) a_hat s b_hat Sigma(row-major)
    /// step seed rng_word_pos`, whitespace separated. Floats use the shortest
    /// representation that parses back to the same value.
    pub fn checkpoint(&self) -> String {
        let d = self.state.dim();
        let m = self.beliefs.b_hat.len();
        let mut out: Vec<String> = vec![d.to_string(), m.to_string()];
        out.extend(self.state.mean.iter().map(f64::to_string));
        out.extend(self.state.cov.transpose().iter().map(f64::to_string));
        out.push(self.beliefs.a_hat.to_string());
        out.push(self.beliefs.s.to_string());
        out.extend(self.beliefs.b_hat.iter().map(f64::to_string));
        out.extend(self.beliefs.sigma.transpose().iter().map(f64::to_string));
        out.push(self.step_index.to_string());
        out.push(self.seed.to_string());
        out.push(self.rng.get_word_pos().to_string());
        out.join(" ")
    }

    pub fn restore(record: &str) -> Result<Self> {
        let bad = |what: &str| Error::InvalidArgument(format!("malformed checkpoint: {what}"));
        let mut tok = record.split_whitespace();
        let mut next = |what: &str| tok.next().ok_or_else(|| bad(what));
        let d: usize = next("d")?.parse().map_err(|_| bad("d"))?;
        let m: usize = next("m")?.parse().map_err(|_| bad("m"))?;
        let mut floats = |count: usize, what: &str| -> Result<Vec<f64>> {
            (0..count)
                .map(|_| next(what)?.parse::<f64>().map_err(|_| bad(what)))
                .collect()
        };
        let mean = DVector::from_vec(floats(d, "mean")?);
        let cov = DMatrix::from_row_slice(d, d, &floats(d * d, "P")?);
        let a_hat = floats(1, "a_hat")?[0];
        let s = floats(1, "s")?[0];
        let b_hat = DVector::from_vec(floats(m, "b_hat")?);
        let sigma = DMatrix::from_row_slice(m, m, &floats(m * m, "Sigma")?);
        let step_index: usize = next("step")?.parse().map_err(|_| bad("step"))?;
        let seed: u64 = next("seed")?.parse().map_err(|_| bad("seed"))?;
        let word_pos: u128 = next("rng position")?
            .parse()
            .map_err(|_| bad("rng position"))?;
        if tok.next().is_some() {
            return Err(bad("trailing fields"));
        }
        let mut st = VikingState::new(
            GaussianState { mean, cov },
            VarianceBeliefs {
                a_hat,
                s,
                b_hat,
                sigma,
            },
            seed,
        );
        st.step_index = step_index;
        st.rng.set_word_pos(word_pos);
        Ok(st)
    }
}

/// Monte-Carlo estimate of `A = E[(KPK + f(b))^-1]`, `b ~ N(b_hat, Sigma)`.
#[derive(Debug, Clone)]
pub struct PrecisionEstimate {
    pub a: DMatrix<f64>,
    pub a_inv: DMatrix<f64>,
    /// Latent draws that entered the average (empty when `Sigma = 0`).
    pub samples: Vec<DVector<f64>>,
}

/// Estimate `A` and `A^-1` from `n_mc` draws of the latent.
///
/// A zero `Sigma` makes the expectation exact: `A^-1 = KPK + f(b_hat)` is
/// returned as is and no draws are made. Draws for which `KPK + f(b_i)` is
/// singular are skipped; an error is returned if all of them are.
pub fn estimate_precision(
    b_hat: &DVector<f64>,
    sigma: &DMatrix<f64>,
    kpk: &DMatrix<f64>,
    transform: &NoiseTransform,
    n_mc: usize,
    rng: &mut Rng,
) -> Result<PrecisionEstimate> {
    if n_mc == 0 {
        return Err(Error::InvalidArgument("n_mc must be at least 1".into()));
    }
    let m = transform.latent_dim();
    if sigma.nrows() != m || sigma.ncols() != m {
        return Err(Error::dim("Sigma", m, sigma.nrows()));
    }
    if sigma.iter().all(|&v| v == 0.0) {
        let c = transform.add_to(kpk, b_hat)?;
        let a = spd_inverse(&c)?;
        return Ok(PrecisionEstimate {
            a,
            a_inv: symmetrized(&c),
            samples: Vec::new(),
        });
    }

    let root = psd_sqrt(sigma);
    let d = transform.dim;
    let mut sum = DMatrix::zeros(d, d);
    let mut samples = Vec::with_capacity(n_mc);
    for _ in 0..n_mc {
        let z = DVector::from_fn(m, |_, _| standard_normal(rng));
        let b = b_hat + &root * z;
        match spd_inverse(&transform.add_to(kpk, &b)?) {
            Ok(inv) => {
                sum += inv;
                samples.push(b);
            }
            Err(Error::Singular(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    if samples.is_empty() {
        return Err(Error::Singular("estimate_precision (every draw)"));
    }
    let mut a = sum / samples.len() as f64;
    symmetrize(&mut a);
    let a_inv = spd_inverse(&a)?;
    Ok(PrecisionEstimate { a, a_inv, samples })
}

/// Exact KL minimizer for the state moments given `A^-1` and the belief on `a`.
///
/// With `v = exp(a_hat - s / 2)`:
/// `P = A^-1 - A^-1 x x^T A^-1 / (x^T A^-1 x + v)` and
/// `theta = prior_mean + P x (y - x^T prior_mean) / v`.
pub fn update_state_moments(
    a_inv: &DMatrix<f64>,
    a_hat: f64,
    s: f64,
    prior_mean: &DVector<f64>,
    x: &DVector<f64>,
    y: f64,
) -> Result<GaussianState> {
    let d = prior_mean.len();
    if x.len() != d {
        return Err(Error::dim("regressor", d, x.len()));
    }
    if a_inv.nrows() != d || a_inv.ncols() != d {
        return Err(Error::dim("A^-1", d, a_inv.nrows()));
    }
    let v = (a_hat - 0.5 * s).exp();
    let ax = a_inv * x;
    let denom = x.dot(&ax) + v;
    let mut cov = a_inv - &ax * ax.transpose() / denom;
    symmetrize(&mut cov);
    let innovation = y - x.dot(prior_mean);
    let mean = prior_mean + (&cov * x) * (innovation / v);
    Ok(GaussianState { mean, cov })
}

/// `(y - theta^T x)^2 + x^T P x`, the expected squared residual under the state belief.
pub fn residual_energy(state: &GaussianState, x: &DVector<f64>, y: f64) -> f64 {
    let r = y - state.mean.dot(x);
    r * r + quad_form(&state.cov, x)
}

/// Minimizer of the linearized bound in `s`: `(1 / s_prior + r2 exp(-a_hat) / 2)^-1`.
pub fn update_s(r2: f64, a_hat: f64, s_prior: f64) -> f64 {
    1.0 / (1.0 / s_prior + 0.5 * r2 * (-a_hat).exp())
}

/// Minimizer of the quadratic bound in `a_hat` on `[a_prev - m_a, a_prev + m_a]`.
pub fn update_a(r2: f64, a_prev: f64, s: f64, s_prior: f64, m_a: f64) -> f64 {
    let scaled = r2 * (-a_prev + 0.5 * s).exp();
    let curvature = 1.0 / s_prior + 0.5 * scaled * m_a.exp();
    let step = 0.5 * (scaled - 1.0) / curvature;
    (a_prev + step).clamp(a_prev - m_a, a_prev + m_a)
}

/// Unconstrained minimizer of the quadratic bound in `(b_hat, Sigma)`:
/// `Sigma = ((Sigma_prev + rho_b I)^-1 + H / 2)^-1`, `b = b_prev - Sigma grad / 2`.
pub fn minimize_b_bound(
    b_prev: &DVector<f64>,
    sigma_prev: &DMatrix<f64>,
    grad: &DVector<f64>,
    hessian: &DMatrix<f64>,
    rho_b: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let m = b_prev.len();
    if grad.len() != m {
        return Err(Error::dim("gradient", m, grad.len()));
    }
    for (what, mat) in [("Sigma_prev", sigma_prev), ("H", hessian)] {
        if mat.nrows() != m || mat.ncols() != m {
            return Err(Error::dim(what, m, mat.nrows()));
        }
    }
    let prior = sigma_prev + DMatrix::identity(m, m) * rho_b;
    let precision = spd_inverse(&prior)? + hessian * 0.5;
    let sigma = spd_inverse(&precision)?;
    let b = b_prev - &sigma * grad * 0.5;
    Ok((b, sigma))
}

/// [`minimize_b_bound`] followed by the threshold `b >= 0` and the floor `b >= floor`.
pub fn update_b(
    b_prev: &DVector<f64>,
    sigma_prev: &DMatrix<f64>,
    grad: &DVector<f64>,
    hessian: &DMatrix<f64>,
    rho_b: f64,
    floor: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (b, sigma) = minimize_b_bound(b_prev, sigma_prev, grad, hessian, rho_b)?;
    let lower = floor.max(0.0);
    Ok((b.map(|v| v.max(lower)), sigma))
}

/// Plug-in one-step predictive: mean `x^T K theta_hat`, variance
/// `x^T (K P K^T + f(b_hat)) x + exp(a_hat + s / 2)`.
pub fn forecast(st: &VikingState, hyper: &VikingHyper, x: &DVector<f64>) -> Result<(f64, f64)> {
    let d = hyper.dim();
    if x.len() != d {
        return Err(Error::dim("regressor", d, x.len()));
    }
    let k = &hyper.transition;
    let mean = x.dot(&(k * &st.state.mean));
    let kpk = k * &st.state.cov * k.transpose();
    let cov = hyper.transform.add_to(&kpk, &st.beliefs.b_hat)?;
    let var = quad_form(&cov, x) + (st.beliefs.a_hat + 0.5 * st.beliefs.s).exp();
    Ok((mean, var))
}

/// One filtering step on `(x, y)`. The returned record holds the forecast
/// made before `y` was seen and the beliefs after the update.
pub fn viking_step(
    st: &mut VikingState,
    hyper: &VikingHyper,
    x: &DVector<f64>,
    y: f64,
) -> Result<StepRecord> {
    let step = st.step_index + 1;
    step_inner(st, hyper, x, y).map_err(|e| e.at_step(step))
}

fn step_inner(
    st: &mut VikingState,
    hyper: &VikingHyper,
    x: &DVector<f64>,
    y: f64,
) -> Result<StepRecord> {
    let d = hyper.dim();
    if x.len() != d {
        return Err(Error::dim("regressor", d, x.len()));
    }
    if st.state.dim() != d {
        return Err(Error::dim("state", d, st.state.dim()));
    }
    if !y.is_finite() || x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "observation or regressor is not finite".into(),
        ));
    }
    let transform = &hyper.transform;
    let k = &hyper.transition;
    let (y_hat, pred_var) = forecast(st, hyper, x)?;

    let a_prev = st.beliefs.a_hat;
    let s_prev = st.beliefs.s;
    let mut b_prev = st.beliefs.b_hat.clone();
    if hyper.learn_b {
        b_prev.apply(|v| *v = v.max(B_FLOOR));
    }
    let sigma_prev = st.beliefs.sigma.clone();
    let m = b_prev.len();

    let mut kpk = k * &st.state.cov * k.transpose();
    symmetrize(&mut kpk);
    let prior_mean = k * &st.state.mean;
    let s_prior = s_prev + hyper.rho_a;
    let m_a = (3.0 * s_prev).max(MA_FLOOR);

    let mut a_hat = a_prev;
    let mut s = s_prior;
    let mut b_hat = b_prev.clone();
    let mut sigma = &sigma_prev + DMatrix::identity(m, m) * hyper.rho_b;
    let mut post = st.state.clone();

    for _ in 0..hyper.n_iter {
        let est = estimate_precision(&b_hat, &sigma, &kpk, transform, hyper.n_mc, &mut st.rng)?;
        post = update_state_moments(&est.a_inv, a_hat, s, &prior_mean, x, y)?;

        if hyper.learn_a {
            let r2 = residual_energy(&post, x, y);
            s = update_s(r2, a_hat, s_prior);
            a_hat = update_a(r2, a_prev, s, s_prior, m_a);
        }

        if hyper.learn_b {
            let shift = &post.mean - &prior_mean;
            let big_b = &post.cov + outer(&shift);
            let c = transform.add_to(&kpk, &b_prev)?;
            let expansion = PsiExpansion::new(*transform, &b_prev, &big_b, &c)?;
            let grad = expansion.gradient();
            let hess = expansion.hessian_bound()?;
            let (b_new, sigma_new) =
                update_b(&b_prev, &sigma_prev, &grad, &hess, hyper.rho_b, B_FLOOR)?;
            b_hat = b_new;
            sigma = sigma_new;
        }
    }
    symmetrize(&mut sigma);
    let finite = |m: &DMatrix<f64>| m.iter().all(|v| v.is_finite());
    if !(a_hat.is_finite() && s.is_finite())
        || post.mean.iter().chain(b_hat.iter()).any(|v| !v.is_finite())
        || !finite(&post.cov)
        || !finite(&sigma)
    {
        return Err(Error::NonFinite("filter update"));
    }

    st.state = post;
    st.beliefs = VarianceBeliefs {
        a_hat,
        s,
        b_hat,
        sigma,
    };
    st.step_index += 1;

    Ok(StepRecord {
        t: st.step_index,
        y,
        forecast: y_hat,
        pred_var,
        residual: y - y_hat,
        a_hat,
        s,
        sigma2_eff: (a_hat - 0.5 * s).exp(),
        b_hat: st.beliefs.b_hat.iter().copied().collect(),
        sigma_diag: st.beliefs.sigma.diagonal().iter().copied().collect(),
        cum_sq_err: 0.0,
    })
}

/// Run the filter over a dataset from `init`.
pub fn viking_run(
    data: &Dataset,
    hyper: &VikingHyper,
    init: VikingState,
) -> Result<Vec<StepRecord>> {
    hyper.validate()?;
    init.beliefs.validate(&hyper.transform)?;
    if data.dim() != hyper.dim() && data.n() > 0 {
        return Err(Error::dim("dataset covariates", hyper.dim(), data.dim()));
    }
    let mut st = init;
    let mut trace = data
        .x
        .iter()
        .zip(&data.y)
        .map(|(x, &y)| viking_step(&mut st, hyper, x, y))
        .collect::<Result<Vec<_>>>()?;
    accumulate_second_half(&mut trace);
    Ok(trace)
}
