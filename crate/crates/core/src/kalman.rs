//! Kalman filter with known, possibly time-varying, noise variances.

use nalgebra::{DMatrix, DVector};

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{is_psd, quad_form, symmetrize, symmetrized};
use crate::trace::{accumulate_second_half, StepRecord};

/// Gaussian belief on the state: mean and covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianState {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::dim("state covariance", mean.len(), cov.nrows()));
        }
        if !is_psd(&cov) {
            return Err(Error::InvalidArgument(
                "state covariance is not symmetric PSD".into(),
            ));
        }
        Ok(GaussianState { mean, cov })
    }

    /// Zero mean and covariance `scale * I`.
    pub fn isotropic(dim: usize, scale: f64) -> Self {
        GaussianState {
            mean: DVector::zeros(dim),
            cov: DMatrix::identity(dim, dim) * scale,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

#[derive(Debug, Clone)]
pub struct KalmanStep {
    pub state: GaussianState,
    /// `x^T K theta_prev`
    pub prediction: f64,
    /// `x^T (K P K^T + Q) x + sigma2`
    pub pred_var: f64,
}

fn check_dims(state: &GaussianState, k: &DMatrix<f64>, x: &DVector<f64>) -> Result<()> {
    let d = state.dim();
    if k.nrows() != d || k.ncols() != d {
        return Err(Error::dim("transition matrix", d, k.nrows().max(k.ncols())));
    }
    if x.len() != d {
        return Err(Error::dim("regressor", d, x.len()));
    }
    Ok(())
}

pub fn kalman_step(
    state: &GaussianState,
    k: &DMatrix<f64>,
    q: &DMatrix<f64>,
    sigma2: f64,
    x: &DVector<f64>,
    y: f64,
) -> Result<KalmanStep> {
    check_dims(state, k, x)?;
    if q.nrows() != state.dim() || q.ncols() != state.dim() {
        return Err(Error::dim("state noise covariance", state.dim(), q.nrows()));
    }
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "observation variance must be positive, got {sigma2}"
        )));
    }
    if !is_psd(q) {
        return Err(Error::InvalidArgument(
            "state noise covariance is not PSD".into(),
        ));
    }

    let prior_mean = k * &state.mean;
    let prior_cov = symmetrized(&(k * &state.cov * k.transpose() + q));
    let prediction = x.dot(&prior_mean);
    let px = &prior_cov * x;
    let pred_var = x.dot(&px) + sigma2;

    let gain = &px / pred_var;
    let mean = &prior_mean + &gain * (y - prediction);
    let mut cov = prior_cov - &px * px.transpose() / pred_var;
    symmetrize(&mut cov);
    if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Kalman update"));
    }

    Ok(KalmanStep {
        state: GaussianState { mean, cov },
        prediction,
        pred_var,
    })
}

/// A per-step parameter that is either fixed or given for every step.
#[derive(Debug, Clone)]
pub enum Schedule<T> {
    Constant(T),
    PerStep(Vec<T>),
}

impl<T> Schedule<T> {
    /// Value at 0-based step index `i`.
    pub fn at(&self, i: usize) -> &T {
        match self {
            Schedule::Constant(v) => v,
            Schedule::PerStep(v) => &v[i],
        }
    }

    fn check_len(&self, what: &'static str, n: usize) -> Result<()> {
        match self {
            Schedule::PerStep(v) if v.len() != n => Err(Error::dim(what, n, v.len())),
            _ => Ok(()),
        }
    }
}

/// Run [`kalman_step`] over a dataset. Steps are numbered from 1.
pub fn kalman_run(
    data: &Dataset,
    k: &DMatrix<f64>,
    q: &Schedule<DMatrix<f64>>,
    sigma2: &Schedule<f64>,
    init: GaussianState,
) -> Result<Vec<StepRecord>> {
    let n = data.n();
    q.check_len("state noise schedule", n)?;
    sigma2.check_len("observation variance schedule", n)?;

    let mut state = init;
    let mut trace = Vec::with_capacity(n);
    for (i, (x, &y)) in data.x.iter().zip(&data.y).enumerate() {
        let q_t = q.at(i);
        let s2 = *sigma2.at(i);
        let step = kalman_step(&state, k, q_t, s2, x, y).map_err(|e| e.at_step(i + 1))?;
        trace.push(StepRecord {
            t: i + 1,
            y,
            forecast: step.prediction,
            pred_var: step.pred_var,
            residual: y - step.prediction,
            a_hat: s2.ln(),
            s: 0.0,
            sigma2_eff: s2,
            b_hat: Vec::new(),
            sigma_diag: Vec::new(),
            cum_sq_err: 0.0,
        });
        state = step.state;
    }
    accumulate_second_half(&mut trace);
    Ok(trace)
}

/// Predictive variance `x^T (K P K^T + Q) x + sigma2` without running the update.
pub fn predictive_variance(
    state: &GaussianState,
    k: &DMatrix<f64>,
    q: &DMatrix<f64>,
    sigma2: f64,
    x: &DVector<f64>,
) -> f64 {
    quad_form(&(k * &state.cov * k.transpose() + q), x) + sigma2
}
