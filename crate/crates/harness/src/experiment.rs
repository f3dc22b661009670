//! Experiment runner: data generation, method dispatch, grid search and the
//! `n_mc` sweep.
//!
//! Synthetic experiments are filtered with `K = I`. The resonator is
//! filtered with its own transition matrix and known state noise: Viking
//! then learns only `sigma2` (diagonal transform, `f(b_hat) = Q`, `Sigma = 0`).

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use viking_core::datagen::{
    gen_design, gen_misspecified, gen_resonator, gen_wellspecified, resonator_sigma2_path,
    resonator_transition, Dataset, RESONATOR_DT, RESONATOR_OMEGA, RESONATOR_Q,
};
use viking_core::transforms::phi_inverse;
use viking_core::{
    kalman_run, viking_run, GaussianState, NoiseTransform, Schedule, StepRecord, TransformKind,
    VarianceBeliefs, VikingHyper, VikingState,
};

use crate::config::{Experiment, ExperimentConfig, Method, QShape, Setting};
use crate::csvio::{fmt_f64, write_table, write_trace};
use crate::error::{HarnessError, Result};
use crate::metrics::{mean_stderr, mse_second_half};

/// One hyperparameter combination of a method.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GridPoint {
    Viking {
        rho_a: f64,
        rho_b: f64,
    },
    Oracle,
    Constant {
        shape: QShape,
        q: f64,
    },
    /// Known state noise with `sigma2 = 1` (resonator).
    KnownQ,
}

impl GridPoint {
    /// `rho_a, rho_b, q_shape, q` columns, empty where not applicable.
    fn columns(&self) -> [String; 4] {
        match *self {
            GridPoint::Viking { rho_a, rho_b } => {
                [fmt_f64(rho_a), fmt_f64(rho_b), String::new(), String::new()]
            }
            GridPoint::Oracle | GridPoint::KnownQ => Default::default(),
            GridPoint::Constant { shape, q } => [
                String::new(),
                String::new(),
                shape.name().into(),
                fmt_f64(q),
            ],
        }
    }
}

/// Grid points in a fixed order: `rho_a` major for Viking, shape major for
/// the constant Kalman filter.
pub fn grid_points(cfg: &ExperimentConfig) -> Vec<GridPoint> {
    match cfg.method {
        Method::Viking => {
            let rho_b: &[f64] = if cfg.experiment == Experiment::Resonator {
                &[0.0]
            } else {
                &cfg.rho_b
            };
            cfg.rho_a
                .iter()
                .flat_map(|&rho_a| {
                    rho_b
                        .iter()
                        .map(move |&rho_b| GridPoint::Viking { rho_a, rho_b })
                })
                .collect()
        }
        Method::KalmanOracle => vec![GridPoint::Oracle],
        Method::KalmanConstant if cfg.experiment == Experiment::Resonator => {
            vec![GridPoint::KnownQ]
        }
        Method::KalmanConstant => cfg
            .q_shapes
            .iter()
            .flat_map(|&shape| {
                cfg.q_grid
                    .iter()
                    .map(move |&q| GridPoint::Constant { shape, q })
            })
            .collect(),
    }
}

/// First grid point, used when filtering a single dataset.
pub fn first_point(cfg: &ExperimentConfig) -> GridPoint {
    grid_points(cfg)[0]
}

pub fn generate(experiment: Experiment, n: usize, seed: u64) -> Result<Dataset> {
    Ok(match experiment {
        Experiment::Resonator => gen_resonator(n, &resonator_sigma2_path(n), seed)?,
        e => {
            let design = gen_design(e.design().expect("synthetic experiment"), n, seed);
            if e.is_misspecified() {
                gen_misspecified(&design, seed)
            } else {
                gen_wellspecified(&design, seed)
            }
        }
    })
}

fn transition(experiment: Experiment) -> DMatrix<f64> {
    match experiment {
        Experiment::Resonator => resonator_transition(RESONATOR_OMEGA, RESONATOR_DT),
        e => DMatrix::identity(e.dim(), e.dim()),
    }
}

fn transform(setting: Setting, d: usize) -> NoiseTransform {
    let kind = match setting {
        Setting::Scalar => TransformKind::Scalar,
        Setting::Diagonal => TransformKind::Diagonal,
    };
    NoiseTransform::new(kind, d)
}

/// Check that a dataset fits an experiment's model.
pub fn check_dataset(cfg: &ExperimentConfig, data: &Dataset) -> Result<()> {
    let d = cfg.experiment.dim();
    if data.n() > 0 && data.dim() != d {
        return Err(HarnessError::usage(format!(
            "dataset has covariate dimension {}, experiment '{}' expects {d}",
            data.dim(),
            cfg.experiment
        )));
    }
    if data.n() < 2 {
        return Err(HarnessError::usage("dataset needs at least 2 rows"));
    }
    Ok(())
}

fn viking_setup(
    cfg: &ExperimentConfig,
    rho_a: f64,
    rho_b: f64,
    seed: u64,
) -> (VikingHyper, VikingState) {
    let d = cfg.experiment.dim();
    let k = transition(cfg.experiment);
    if cfg.experiment == Experiment::Resonator {
        let t = NoiseTransform::diagonal(d);
        let mut hyper = VikingHyper::new(t, k);
        hyper.rho_a = rho_a;
        hyper.rho_b = 0.0;
        hyper.n_mc = cfg.n_mc;
        hyper.n_iter = cfg.n_iter;
        hyper.learn_a = cfg.learn_a;
        hyper.learn_b = false;
        let beliefs = VarianceBeliefs {
            a_hat: cfg.init.a0,
            s: cfg.init.s0,
            b_hat: DVector::from_iterator(d, RESONATOR_Q.iter().map(|&q| phi_inverse(q))),
            sigma: DMatrix::zeros(d, d),
        };
        let st = VikingState::new(GaussianState::isotropic(d, cfg.init.p0), beliefs, seed);
        return (hyper, st);
    }
    let t = transform(cfg.setting, d);
    let mut hyper = VikingHyper::new(t, k);
    hyper.rho_a = rho_a;
    hyper.rho_b = rho_b;
    hyper.n_mc = cfg.n_mc;
    hyper.n_iter = cfg.n_iter;
    hyper.learn_a = cfg.learn_a;
    hyper.learn_b = cfg.learn_b;
    (hyper, VikingState::initial(&cfg.init, &t, seed))
}

fn constant_q(shape: QShape, q: f64, d: usize) -> DMatrix<f64> {
    let diag = DVector::from_fn(d, |j, _| match shape {
        QShape::Masked if j < 2 => 0.0,
        _ => q,
    });
    DMatrix::from_diagonal(&diag)
}

/// Run one method at one grid point on one dataset.
pub fn run_method(
    cfg: &ExperimentConfig,
    point: GridPoint,
    data: &Dataset,
    seed: u64,
) -> Result<Vec<StepRecord>> {
    check_dataset(cfg, data)?;
    let d = cfg.experiment.dim();
    let init = GaussianState::isotropic(d, cfg.init.p0);
    let k = transition(cfg.experiment);
    let seeded = |source| HarnessError::Seeded { seed, source };
    match point {
        GridPoint::Viking { rho_a, rho_b } => {
            let (hyper, st) = viking_setup(cfg, rho_a, rho_b, seed);
            viking_run(data, &hyper, st).map_err(seeded)
        }
        GridPoint::Oracle => {
            let truth = data.truth.as_ref().ok_or_else(|| {
                HarnessError::usage("kalman-oracle needs the true variances in the dataset")
            })?;
            let q = truth
                .iter()
                .map(|r| DMatrix::from_diagonal(&r.q_diag))
                .collect();
            let s2 = truth.iter().map(|r| r.sigma2).collect();
            kalman_run(
                data,
                &k,
                &Schedule::PerStep(q),
                &Schedule::PerStep(s2),
                init,
            )
            .map_err(seeded)
        }
        GridPoint::Constant { shape, q } => {
            let q = constant_q(shape, q, d);
            kalman_run(
                data,
                &k,
                &Schedule::Constant(q),
                &Schedule::Constant(1.0),
                init,
            )
            .map_err(seeded)
        }
        GridPoint::KnownQ => {
            let q = DMatrix::from_diagonal(&DVector::from_column_slice(&RESONATOR_Q));
            kalman_run(
                data,
                &k,
                &Schedule::Constant(q),
                &Schedule::Constant(1.0),
                init,
            )
            .map_err(seeded)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub index: usize,
    pub point: GridPoint,
    /// Second-half MSE per seed, in seed order.
    pub mses: Vec<f64>,
    pub mean_mse: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub experiment: Experiment,
    pub method: Method,
    pub setting: Setting,
    pub n_mc: usize,
    pub seeds: Vec<u64>,
    pub rows: Vec<SummaryRow>,
    /// Index of the grid point with the smallest mean MSE.
    pub best: usize,
    /// Traces of the best grid point, one per seed.
    pub traces: Vec<(u64, Vec<StepRecord>)>,
}

impl ExperimentResult {
    pub fn best_row(&self) -> &SummaryRow {
        &self.rows[self.best]
    }
}

/// Index of the smallest value; ties go to the smaller index.
pub fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = i;
        }
    }
    best
}

pub fn generate_all(cfg: &ExperimentConfig) -> Result<Vec<Dataset>> {
    cfg.seeds
        .par_iter()
        .map(|&seed| generate(cfg.experiment, cfg.n, seed))
        .collect()
}

/// Evaluate every grid point on every seed and keep the traces of the best
/// point (by mean MSE over seeds).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let data = generate_all(cfg)?;
    run_on(cfg, &data)
}

/// [`run_experiment`] on pre-generated datasets (one per seed).
pub fn run_on(cfg: &ExperimentConfig, data: &[Dataset]) -> Result<ExperimentResult> {
    cfg.validate()?;
    if data.len() != cfg.seeds.len() {
        return Err(HarnessError::usage("one dataset per seed is required"));
    }
    let points = grid_points(cfg);
    let n_seeds = cfg.seeds.len();
    let mses: Vec<f64> = (0..points.len() * n_seeds)
        .into_par_iter()
        .map(|cell| {
            let (p, s) = (cell / n_seeds, cell % n_seeds);
            mse_second_half(&run_method(cfg, points[p], &data[s], cfg.seeds[s])?)
        })
        .collect::<Result<_>>()?;

    let rows: Vec<SummaryRow> = points
        .iter()
        .enumerate()
        .map(|(index, &point)| {
            let cell = mses[index * n_seeds..(index + 1) * n_seeds].to_vec();
            let (mean_mse, stderr) = mean_stderr(&cell);
            SummaryRow {
                index,
                point,
                mses: cell,
                mean_mse,
                stderr,
            }
        })
        .collect();
    let best = argmin(&rows.iter().map(|r| r.mean_mse).collect::<Vec<_>>());
    let traces = cfg
        .seeds
        .par_iter()
        .zip(data)
        .map(|(&seed, d)| Ok((seed, run_method(cfg, rows[best].point, d, seed)?)))
        .collect::<Result<_>>()?;
    Ok(ExperimentResult {
        experiment: cfg.experiment,
        method: cfg.method,
        setting: cfg.setting,
        n_mc: cfg.n_mc,
        seeds: cfg.seeds.clone(),
        rows,
        best,
        traces,
    })
}

pub fn summary_header() -> Vec<String> {
    [
        "experiment",
        "method",
        "setting",
        "grid_index",
        "rho_a",
        "rho_b",
        "q_shape",
        "q",
        "n_mc",
        "n_seeds",
        "mean_mse",
        "stderr",
        "best",
    ]
    .into_iter()
    .map(String::from)
    .collect()
}

pub fn summary_rows(result: &ExperimentResult) -> Vec<Vec<String>> {
    result
        .rows
        .iter()
        .map(|r| {
            let mut row = vec![
                result.experiment.name().to_string(),
                result.method.name().to_string(),
                result.setting.name().to_string(),
                r.index.to_string(),
            ];
            row.extend(r.point.columns());
            row.push(result.n_mc.to_string());
            row.push(r.mses.len().to_string());
            row.push(fmt_f64(r.mean_mse));
            row.push(fmt_f64(r.stderr));
            row.push((r.index == result.best).to_string());
            row
        })
        .collect()
}

/// `<out>/<experiment>/<method>-<setting>/`
pub fn result_dir(out: &Path, experiment: Experiment, method: Method, setting: Setting) -> PathBuf {
    out.join(experiment.name())
        .join(format!("{}-{}", method.name(), setting.name()))
}

/// Write `seed<k>.csv` traces of the best grid point and `summary.csv`.
/// Returns the directory written to.
pub fn write_experiment(result: &ExperimentResult, out: &Path) -> Result<PathBuf> {
    let dir = result_dir(out, result.experiment, result.method, result.setting);
    for (seed, trace) in &result.traces {
        write_trace(&dir.join(format!("seed{seed}.csv")), trace)?;
    }
    write_table(
        &dir.join("summary.csv"),
        &summary_header(),
        &summary_rows(result),
    )?;
    Ok(dir)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub experiment: Experiment,
    pub setting: Setting,
    pub n_mc: usize,
    pub mean_mse: f64,
    pub stderr: f64,
    /// `mean_mse / mean_mse(n_mc = 1)`
    pub ratio: f64,
}

/// Viking at the first `(rho_a, rho_b)` of the config for each `n_mc` in the
/// list, normalized by the mean MSE at `n_mc = 1`.
pub fn sweep_nmc(cfg: &ExperimentConfig, nmc_list: &[usize]) -> Result<Vec<SweepRow>> {
    let data = generate_all(cfg)?;
    sweep_nmc_on(cfg, nmc_list, &data)
}

pub fn sweep_nmc_on(
    cfg: &ExperimentConfig,
    nmc_list: &[usize],
    data: &[Dataset],
) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    if !nmc_list.contains(&1) {
        return Err(HarnessError::usage(
            "n_mc sweep needs 1 in the list (the normalizer)",
        ));
    }
    if nmc_list.contains(&0) {
        return Err(HarnessError::usage("n_mc values must be at least 1"));
    }
    let point = GridPoint::Viking {
        rho_a: cfg.rho_a[0],
        rho_b: cfg.rho_b[0],
    };
    let n_seeds = cfg.seeds.len();
    let mses: Vec<f64> = (0..nmc_list.len() * n_seeds)
        .into_par_iter()
        .map(|cell| {
            let (k, s) = (cell / n_seeds, cell % n_seeds);
            let run_cfg = ExperimentConfig {
                n_mc: nmc_list[k],
                method: Method::Viking,
                ..cfg.clone()
            };
            mse_second_half(&run_method(&run_cfg, point, &data[s], cfg.seeds[s])?)
        })
        .collect::<Result<_>>()?;
    let stats: Vec<(f64, f64)> = mses.chunks(n_seeds).map(mean_stderr).collect();
    let norm = stats[nmc_list
        .iter()
        .position(|&m| m == 1)
        .expect("checked above")]
    .0;
    Ok(nmc_list
        .iter()
        .zip(stats)
        .map(|(&n_mc, (mean_mse, stderr))| SweepRow {
            experiment: cfg.experiment,
            setting: cfg.setting,
            n_mc,
            mean_mse,
            stderr,
            ratio: mean_mse / norm,
        })
        .collect())
}

pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let header: Vec<String> = [
        "experiment",
        "setting",
        "n_mc",
        "mean_mse",
        "stderr",
        "ratio",
    ]
    .into_iter()
    .map(String::from)
    .collect();
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.experiment.name().into(),
                r.setting.name().into(),
                r.n_mc.to_string(),
                fmt_f64(r.mean_mse),
                fmt_f64(r.stderr),
                fmt_f64(r.ratio),
            ]
        })
        .collect();
    write_table(path, &header, &body)
}
