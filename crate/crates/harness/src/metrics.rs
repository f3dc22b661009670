use viking_core::trace::second_half_start;
use viking_core::StepRecord;

use crate::error::{HarnessError, Result};

/// Mean squared one-step forecast residual over steps `t > n / 2`.
pub fn mse_second_half(trace: &[StepRecord]) -> Result<f64> {
    let start = second_half_start(trace.len());
    let tail: Vec<f64> = trace
        .iter()
        .filter(|r| r.t >= start)
        .map(|r| r.residual * r.residual)
        .collect();
    if tail.is_empty() {
        return Err(HarnessError::usage("second half of the trace is empty"));
    }
    Ok(tail.iter().sum::<f64>() / tail.len() as f64)
}

/// Mean and standard error of the mean (0 for a single value).
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let (ma, _) = mean_stderr(a);
    let (mb, _) = mean_stderr(b);
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    cov / (va * vb).sqrt()
}

/// Correlation between `exp(a_hat_t)` and the true `sigma2_t` over `t > n / 2`.
pub fn variance_tracking(trace: &[StepRecord], true_sigma2: &[f64]) -> f64 {
    let start = second_half_start(trace.len());
    let (est, truth): (Vec<f64>, Vec<f64>) = trace
        .iter()
        .zip(true_sigma2)
        .filter(|(r, _)| r.t >= start)
        .map(|(r, s)| (r.a_hat.exp(), *s))
        .unzip();
    pearson(&est, &truth)
}
