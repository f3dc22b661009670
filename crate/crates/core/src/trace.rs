//! Per-step filter output.

/// One time step of a filtering run. `t` is 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    pub y: f64,
    /// One-step forecast made before `y` was observed.
    pub forecast: f64,
    pub pred_var: f64,
    /// `y - forecast`
    pub residual: f64,
    pub a_hat: f64,
    pub s: f64,
    /// `exp(a_hat - s / 2)`, the observation variance used by the state update.
    pub sigma2_eff: f64,
    pub b_hat: Vec<f64>,
    pub sigma_diag: Vec<f64>,
    /// Running sum of squared residuals over the second half, zero before it.
    pub cum_sq_err: f64,
}

/// First 1-based step counted in the second half of a run of length `n`:
/// steps with `t > floor(n / 2)`.
pub fn second_half_start(n: usize) -> usize {
    n / 2 + 1
}

/// Fill `cum_sq_err` for a complete trace.
pub fn accumulate_second_half(trace: &mut [StepRecord]) {
    let start = second_half_start(trace.len());
    let mut acc = 0.0;
    for rec in trace.iter_mut() {
        if rec.t >= start {
            acc += rec.residual * rec.residual;
        }
        rec.cum_sq_err = acc;
    }
}
