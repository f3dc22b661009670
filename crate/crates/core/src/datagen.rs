//! Synthetic datasets with recorded ground truth.
//!
//! Random draws are split over independent streams of one seed (see
//! [`crate::rng::Stream`]): the design, the state noise (including the
//! initial state), the observation noise and the mixture coin each have
//! their own stream. Observation `y_t` is always computed as
//! `theta_t . x_t + sqrt(sigma2_t) * z_t` with `z_t` the `t`-th draw of the
//! observation stream, so recorded truth reproduces `y` exactly.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::rng::{fair_coin, standard_normal, stream_rng, uniform01, Rng, Stream};

/// Dimension of the regression designs.
pub const DESIGN_DIM: usize = 5;
/// Variance of the per-step increments of the non-i.i.d. design.
pub const DESIGN_WALK_VAR: f64 = 1e-3;
/// AR(1) coefficient of the two states of the misspecified mixture.
pub const MIXTURE_CONTRACTION: f64 = 0.9;
pub const RESONATOR_OMEGA: f64 = 0.05;
pub const RESONATOR_DT: f64 = 0.1;
pub const RESONATOR_Q: [f64; 3] = [0.01, 0.0, 0.0001];

/// Ground truth for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub sigma2: f64,
    pub q_diag: DVector<f64>,
    /// State that generated `y_t` (the active branch for the mixture).
    pub theta: DVector<f64>,
    /// Active mixture branch, when the generator is a mixture.
    pub branch: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GeneratorMeta {
    pub name: String,
    pub params: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Vec<DVector<f64>>,
    pub y: Vec<f64>,
    pub truth: Option<Vec<Truth>>,
    pub seed: u64,
    pub meta: GeneratorMeta,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Covariate dimension, 0 for an empty dataset.
    pub fn dim(&self) -> usize {
        self.x.first().map_or(0, |x| x.len())
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.x.len() != n {
            return Err(Error::dim("design length", n, self.x.len()));
        }
        let d = self.dim();
        if let Some(bad) = self.x.iter().find(|x| x.len() != d) {
            return Err(Error::dim("design row", d, bad.len()));
        }
        if let Some(truth) = &self.truth {
            if truth.len() != n {
                return Err(Error::dim("truth length", n, truth.len()));
            }
            for rec in truth {
                if !(rec.sigma2 > 0.0) {
                    return Err(Error::InvalidArgument(
                        "recorded sigma2 must be positive".into(),
                    ));
                }
                if rec.q_diag.iter().any(|&q| q < 0.0) {
                    return Err(Error::InvalidArgument(
                        "recorded Q diagonal must be nonnegative".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn has_mixture(&self) -> bool {
        self.truth
            .as_ref()
            .is_some_and(|t| t.iter().any(|r| r.branch.is_some()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DesignKind {
    Iid,
    NonIid,
}

/// Fold a value that left `[0, 1]` back in: `ceil(z) - z`.
pub fn reflect_unit(z: f64) -> f64 {
    if (0.0..=1.0).contains(&z) {
        z
    } else {
        z.ceil() - z
    }
}

pub fn gen_design(kind: DesignKind, n: usize, seed: u64) -> Vec<DVector<f64>> {
    gen_design_with(kind, n, DESIGN_WALK_VAR, seed)
}

/// Five-dimensional design in `[0, 1]^4 x {1}`. For [`DesignKind::NonIid`]
/// each of the first four coordinates is a reflected gaussian walk with
/// increment variance `walk_var`.
pub fn gen_design_with(kind: DesignKind, n: usize, walk_var: f64, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = stream_rng(seed, Stream::Design);
    let walk_sd = walk_var.sqrt();
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(n);
    for _ in 0..n {
        let mut x = DVector::from_element(DESIGN_DIM, 1.0);
        match (kind, out.last()) {
            (DesignKind::NonIid, Some(prev)) => {
                for j in 0..DESIGN_DIM - 1 {
                    let z = prev[j] + walk_sd * standard_normal(&mut rng);
                    x[j] = reflect_unit(z);
                }
            }
            _ => {
                for j in 0..DESIGN_DIM - 1 {
                    x[j] = uniform01(&mut rng);
                }
            }
        }
        out.push(x);
    }
    out
}

/// `sigma2_t = 1 + 0.1 cos(4 pi t / n)`
pub fn synthetic_sigma2(t: usize, n: usize) -> f64 {
    1.0 + 0.1 * (4.0 * PI * t as f64 / n as f64).cos()
}

/// `(0.25 + 0.2 cos(4 pi t / n)) * (0, 0, 1, 1, 1)`
pub fn synthetic_q_diag(t: usize, n: usize) -> DVector<f64> {
    let scale = 0.25 + 0.2 * (4.0 * PI * t as f64 / n as f64).cos();
    DVector::from_vec(vec![0.0, 0.0, scale, scale, scale])
}

/// Observation and state noise variances for steps `t = 1..=n`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub sigma2: Vec<f64>,
    pub q_diag: Vec<DVector<f64>>,
}

impl NoiseSchedule {
    /// The smoothly varying variances of the synthetic regression experiments.
    pub fn synthetic(n: usize) -> Self {
        NoiseSchedule {
            sigma2: (1..=n).map(|t| synthetic_sigma2(t, n)).collect(),
            q_diag: (1..=n).map(|t| synthetic_q_diag(t, n)).collect(),
        }
    }

    pub fn constant(n: usize, sigma2: f64, q_diag: DVector<f64>) -> Self {
        NoiseSchedule {
            sigma2: vec![sigma2; n],
            q_diag: vec![q_diag; n],
        }
    }

    fn check(&self, n: usize, d: usize) -> Result<()> {
        if self.sigma2.len() != n {
            return Err(Error::dim("sigma2 schedule", n, self.sigma2.len()));
        }
        if self.q_diag.len() != n {
            return Err(Error::dim("Q schedule", n, self.q_diag.len()));
        }
        if let Some(q) = self.q_diag.iter().find(|q| q.len() != d) {
            return Err(Error::dim("Q diagonal", d, q.len()));
        }
        if self.sigma2.iter().any(|&s| s < 0.0)
            || self.q_diag.iter().any(|q| q.iter().any(|&v| v < 0.0))
        {
            return Err(Error::InvalidArgument(
                "noise variances must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

fn gaussian_vector(rng: &mut Rng, d: usize) -> DVector<f64> {
    DVector::from_fn(d, |_, _| standard_normal(rng))
}

fn add_scaled_noise(theta: &mut DVector<f64>, q_diag: &DVector<f64>, rng: &mut Rng) {
    for j in 0..theta.len() {
        let z = standard_normal(rng);
        theta[j] += q_diag[j].sqrt() * z;
    }
}

/// The first `n` draws of the observation-noise stream of `seed`.
pub fn observation_noise(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = stream_rng(seed, Stream::ObservationNoise);
    (0..n).map(|_| standard_normal(&mut rng)).collect()
}

/// `theta . x + sqrt(sigma2) * z`
pub fn observe(theta: &DVector<f64>, x: &DVector<f64>, sigma2: f64, z: f64) -> f64 {
    theta.dot(x) + sigma2.sqrt() * z
}

/// Random-walk state (`K = I`) observed through the design, with the
/// synthetic noise schedule and `theta_0 ~ N(0, I)`.
pub fn gen_wellspecified(design: &[DVector<f64>], seed: u64) -> Dataset {
    let schedule = NoiseSchedule::synthetic(design.len());
    simulate_wellspecified(design, &schedule, None, seed)
        .expect("synthetic schedule matches its design")
}

pub fn simulate_wellspecified(
    design: &[DVector<f64>],
    schedule: &NoiseSchedule,
    theta0: Option<DVector<f64>>,
    seed: u64,
) -> Result<Dataset> {
    let n = design.len();
    let d = design.first().map_or(DESIGN_DIM, |x| x.len());
    schedule.check(n, d)?;
    let mut state_rng = stream_rng(seed, Stream::StateNoise);
    let z_obs = observation_noise(seed, n);

    let drawn = gaussian_vector(&mut state_rng, d);
    let mut theta = theta0.unwrap_or(drawn);
    let mut y = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    for (t, x) in design.iter().enumerate() {
        add_scaled_noise(&mut theta, &schedule.q_diag[t], &mut state_rng);
        let s2 = schedule.sigma2[t];
        y.push(observe(&theta, x, s2, z_obs[t]));
        truth.push(Truth {
            sigma2: s2,
            q_diag: schedule.q_diag[t].clone(),
            theta: theta.clone(),
            branch: None,
        });
    }
    Ok(Dataset {
        x: design.to_vec(),
        y,
        truth: Some(truth),
        seed,
        meta: GeneratorMeta {
            name: "well-specified".into(),
            params: vec![("n".into(), n.to_string())],
        },
    })
}

/// Two independent AR(1) states `theta_t = 0.9 theta_{t-1} + N(0, Q_t)`; each
/// observation uses one of them chosen by a fair coin.
pub fn gen_misspecified(design: &[DVector<f64>], seed: u64) -> Dataset {
    let schedule = NoiseSchedule::synthetic(design.len());
    simulate_misspecified(design, &schedule, None, seed)
        .expect("synthetic schedule matches its design")
}

pub fn simulate_misspecified(
    design: &[DVector<f64>],
    schedule: &NoiseSchedule,
    theta0: Option<[DVector<f64>; 2]>,
    seed: u64,
) -> Result<Dataset> {
    let n = design.len();
    let d = design.first().map_or(DESIGN_DIM, |x| x.len());
    schedule.check(n, d)?;
    let mut state_rng = stream_rng(seed, Stream::StateNoise);
    let mut coin = stream_rng(seed, Stream::Mixture);
    let z_obs = observation_noise(seed, n);

    let drawn = [
        gaussian_vector(&mut state_rng, d),
        gaussian_vector(&mut state_rng, d),
    ];
    let mut thetas = theta0.unwrap_or(drawn);
    let mut y = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    for (t, x) in design.iter().enumerate() {
        for theta in thetas.iter_mut() {
            *theta *= MIXTURE_CONTRACTION;
            add_scaled_noise(theta, &schedule.q_diag[t], &mut state_rng);
        }
        let branch = u8::from(fair_coin(&mut coin));
        let active = &thetas[branch as usize];
        let s2 = schedule.sigma2[t];
        y.push(observe(active, x, s2, z_obs[t]));
        truth.push(Truth {
            sigma2: s2,
            q_diag: schedule.q_diag[t].clone(),
            theta: active.clone(),
            branch: Some(branch),
        });
    }
    Ok(Dataset {
        x: design.to_vec(),
        y,
        truth: Some(truth),
        seed,
        meta: GeneratorMeta {
            name: "misspecified".into(),
            params: vec![
                ("n".into(), n.to_string()),
                ("contraction".into(), MIXTURE_CONTRACTION.to_string()),
            ],
        },
    })
}

/// Transition matrix of the stochastic resonator.
pub fn resonator_transition(omega: f64, dt: f64) -> DMatrix<f64> {
    let (s, c) = (omega * dt).sin_cos();
    DMatrix::from_row_slice(
        3,
        3,
        &[1.0, 0.0, 0.0, 0.0, c, s / omega, 0.0, -omega * s, c],
    )
}

/// Observation regressor of the resonator: `y` sees `theta_1 + theta_2`.
pub fn resonator_regressor() -> DVector<f64> {
    DVector::from_vec(vec![1.0, 1.0, 0.0])
}

/// Default observation-variance path for the resonator: `log sigma2_t = sin(2 pi t / n)`.
pub fn resonator_sigma2_path(n: usize) -> Vec<f64> {
    (1..=n)
        .map(|t| (2.0 * PI * t as f64 / n as f64).sin().exp())
        .collect()
}

/// Resonator with the fixed state noise `diag(0.01, 0, 0.0001)` and
/// `theta_0 ~ N(0, I)`.
pub fn gen_resonator(n: usize, sigma_traj: &[f64], seed: u64) -> Result<Dataset> {
    if sigma_traj.len() != n {
        return Err(Error::dim("resonator sigma2 path", n, sigma_traj.len()));
    }
    simulate_resonator(
        sigma_traj,
        &DVector::from_column_slice(&RESONATOR_Q),
        None,
        seed,
    )
}

/// Resonator driven by the observation variances `sigma_traj`, state noise
/// `diag(q_diag)` and `theta_0` (default `N(0, I)`).
pub fn simulate_resonator(
    sigma_traj: &[f64],
    q_diag: &DVector<f64>,
    theta0: Option<DVector<f64>>,
    seed: u64,
) -> Result<Dataset> {
    let n = sigma_traj.len();
    if q_diag.len() != 3 {
        return Err(Error::dim("resonator Q diagonal", 3, q_diag.len()));
    }
    let schedule = NoiseSchedule {
        sigma2: sigma_traj.to_vec(),
        q_diag: vec![q_diag.clone(); n],
    };
    schedule.check(n, 3)?;
    let k = resonator_transition(RESONATOR_OMEGA, RESONATOR_DT);
    let x = resonator_regressor();
    let mut state_rng = stream_rng(seed, Stream::StateNoise);
    let z_obs = observation_noise(seed, n);

    let drawn = gaussian_vector(&mut state_rng, 3);
    let mut theta = theta0.unwrap_or(drawn);
    let mut y = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    for t in 0..n {
        theta = &k * &theta;
        add_scaled_noise(&mut theta, q_diag, &mut state_rng);
        let s2 = sigma_traj[t];
        y.push(observe(&theta, &x, s2, z_obs[t]));
        truth.push(Truth {
            sigma2: s2,
            q_diag: q_diag.clone(),
            theta: theta.clone(),
            branch: None,
        });
    }
    Ok(Dataset {
        x: vec![x; n],
        y,
        truth: Some(truth),
        seed,
        meta: GeneratorMeta {
            name: "resonator".into(),
            params: vec![
                ("n".into(), n.to_string()),
                ("omega".into(), RESONATOR_OMEGA.to_string()),
                ("dt".into(), RESONATOR_DT.to_string()),
            ],
        },
    })
}
