//! Experiment configuration and its `key = value` text format.
//!
//! Every key accepted in a config file can also be given as a command-line
//! flag; both go through [`ExperimentConfig::set`], so they parse the same.
//!
//! Values:
//! - reals: plain decimals or `e^-k` (meaning `exp(-k)`);
//! - real lists: comma separated, or `grid` for `e^-1, ..., e^-10`;
//! - seeds: comma separated integers or inclusive ranges `a..b`;
//! - flags: `true` / `false`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use viking_core::datagen::{DesignKind, DESIGN_DIM};
use viking_core::VikingInit;

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Experiment {
    Resonator,
    WsIid,
    WsNonIid,
    MsIid,
    MsNonIid,
}

impl Experiment {
    pub const ALL: [Experiment; 5] = [
        Experiment::Resonator,
        Experiment::WsIid,
        Experiment::WsNonIid,
        Experiment::MsIid,
        Experiment::MsNonIid,
    ];

    /// The four regression settings with the 5-dimensional design.
    pub const SYNTHETIC: [Experiment; 4] = [
        Experiment::WsIid,
        Experiment::WsNonIid,
        Experiment::MsIid,
        Experiment::MsNonIid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Resonator => "resonator",
            Experiment::WsIid => "ws-iid",
            Experiment::WsNonIid => "ws-noniid",
            Experiment::MsIid => "ms-iid",
            Experiment::MsNonIid => "ms-noniid",
        }
    }

    pub fn design(self) -> Option<DesignKind> {
        match self {
            Experiment::Resonator => None,
            Experiment::WsIid | Experiment::MsIid => Some(DesignKind::Iid),
            Experiment::WsNonIid | Experiment::MsNonIid => Some(DesignKind::NonIid),
        }
    }

    pub fn is_misspecified(self) -> bool {
        matches!(self, Experiment::MsIid | Experiment::MsNonIid)
    }

    /// State dimension of the generated data.
    pub fn dim(self) -> usize {
        match self {
            Experiment::Resonator => 3,
            _ => DESIGN_DIM,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Viking,
    /// Kalman filter fed with the true variances.
    KalmanOracle,
    /// Kalman filter with `sigma2 = 1` and a constant `Q` from a grid.
    KalmanConstant,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Viking => "viking",
            Method::KalmanOracle => "kalman-oracle",
            Method::KalmanConstant => "kalman-constant",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Setting {
    Scalar,
    Diagonal,
}

impl Setting {
    pub fn name(self) -> &'static str {
        match self {
            Setting::Scalar => "scalar",
            Setting::Diagonal => "diagonal",
        }
    }
}

/// Shape of the constant state-noise covariance `Q = q * shape`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum QShape {
    /// `diag(0, 0, 1, 1, 1)`: no noise on the first two coordinates.
    Masked,
    /// Identity.
    Full,
}

impl QShape {
    pub fn name(self) -> &'static str {
        match self {
            QShape::Masked => "masked",
            QShape::Full => "full",
        }
    }
}

macro_rules! named_enum {
    ($ty:ty, $what:literal, [$($v:expr),+]) => {
        impl FromStr for $ty {
            type Err = HarnessError;
            fn from_str(s: &str) -> Result<Self> {
                let s = s.trim();
                [$($v),+]
                    .into_iter()
                    .find(|v| v.name() == s)
                    .ok_or_else(|| {
                        let names: Vec<&str> = [$($v.name()),+].to_vec();
                        HarnessError::usage(format!(
                            "unknown {} '{s}' (expected one of: {})",
                            $what,
                            names.join(", ")
                        ))
                    })
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }
    };
}

named_enum!(
    Experiment,
    "experiment",
    [
        Experiment::Resonator,
        Experiment::WsIid,
        Experiment::WsNonIid,
        Experiment::MsIid,
        Experiment::MsNonIid
    ]
);
named_enum!(
    Method,
    "method",
    [Method::Viking, Method::KalmanOracle, Method::KalmanConstant]
);
named_enum!(Setting, "setting", [Setting::Scalar, Setting::Diagonal]);
named_enum!(QShape, "q shape", [QShape::Masked, QShape::Full]);

/// `e^-i` for `i` in `lo..=hi`.
pub fn exp_grid(lo: i32, hi: i32) -> Vec<f64> {
    (lo..=hi).map(|i| (-f64::from(i)).exp()).collect()
}

/// The hyperparameter grid `e^-1, ..., e^-10`.
pub fn rho_grid() -> Vec<f64> {
    exp_grid(1, 10)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub n: usize,
    pub seeds: Vec<u64>,
    pub method: Method,
    pub setting: Setting,
    pub rho_a: Vec<f64>,
    pub rho_b: Vec<f64>,
    pub n_mc: usize,
    pub n_iter: usize,
    pub learn_a: bool,
    pub learn_b: bool,
    pub q_shapes: Vec<QShape>,
    pub q_grid: Vec<f64>,
    pub init: VikingInit,
    pub nmc_list: Vec<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: Experiment::MsNonIid,
            n: 1000,
            seeds: vec![1],
            method: Method::Viking,
            setting: Setting::Diagonal,
            rho_a: vec![(-9.0f64).exp()],
            rho_b: vec![(-6.0f64).exp()],
            n_mc: 10,
            n_iter: 2,
            learn_a: true,
            learn_b: true,
            q_shapes: vec![QShape::Masked, QShape::Full],
            q_grid: exp_grid(-1, 10),
            init: VikingInit::default(),
            nmc_list: vec![1, 2, 5, 10, 20],
        }
    }
}

/// Keys understood by [`ExperimentConfig::set`].
pub const KEYS: &[&str] = &[
    "experiment",
    "n",
    "seed",
    "seeds",
    "method",
    "setting",
    "rho_a",
    "rho_b",
    "n_mc",
    "n_iter",
    "learn_a",
    "learn_b",
    "q_shape",
    "q_grid",
    "p0",
    "a0",
    "s0",
    "q0",
    "sigma0",
    "nmc_list",
];

impl ExperimentConfig {
    /// Set one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let value = value.trim();
        match key.as_str() {
            "experiment" => self.experiment = value.parse()?,
            "n" => self.n = parse_int(value)?,
            "seed" | "seeds" => self.seeds = parse_seeds(value)?,
            "method" => self.method = value.parse()?,
            "setting" => self.setting = value.parse()?,
            "rho_a" => self.rho_a = parse_real_list(value)?,
            "rho_b" => self.rho_b = parse_real_list(value)?,
            "n_mc" => self.n_mc = parse_int(value)?,
            "n_iter" => self.n_iter = parse_int(value)?,
            "learn_a" => self.learn_a = parse_bool(value)?,
            "learn_b" => self.learn_b = parse_bool(value)?,
            "q_shape" => {
                self.q_shapes = if value == "both" {
                    vec![QShape::Masked, QShape::Full]
                } else {
                    split_list(value).map(str::parse).collect::<Result<_>>()?
                }
            }
            "q_grid" => self.q_grid = parse_real_list(value)?,
            "p0" => self.init.p0 = parse_real(value)?,
            "a0" => self.init.a0 = parse_real(value)?,
            "s0" => self.init.s0 = parse_real(value)?,
            "q0" => self.init.q0 = parse_real(value)?,
            "sigma0" => self.init.sigma0 = parse_real(value)?,
            "nmc_list" => {
                self.nmc_list = split_list(value).map(parse_int).collect::<Result<_>>()?
            }
            other => {
                return Err(HarnessError::usage(format!(
                    "unknown config key '{other}' (known: {})",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Apply a `key = value` text. Blank lines and `#` comments are ignored.
    pub fn apply_text(&mut self, text: &str, path: &Path) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| HarnessError::Config {
                path: path.to_path_buf(),
                line: i + 1,
                msg,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err("expected 'key = value'".into()))?;
            self.set(key, value).map_err(|e| err(e.to_string()))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text(&text, path)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(HarnessError::usage(msg.to_string()));
        if self.n < 2 {
            return fail("n must be at least 2");
        }
        if self.seeds.is_empty() {
            return fail("at least one seed is required");
        }
        if self.n_mc == 0 || self.n_iter == 0 {
            return fail("n_mc and n_iter must be at least 1");
        }
        if self.rho_a.is_empty()
            || self.rho_b.is_empty()
            || self.q_grid.is_empty()
            || self.q_shapes.is_empty()
        {
            return fail("grids must be non-empty");
        }
        if self
            .rho_a
            .iter()
            .chain(&self.rho_b)
            .any(|&r| !(r >= 0.0 && r.is_finite()))
        {
            return fail("rho values must be finite and nonnegative");
        }
        if self.q_grid.iter().any(|&q| !(q >= 0.0 && q.is_finite())) {
            return fail("q values must be finite and nonnegative");
        }
        if self.init.p0 <= 0.0 || self.init.s0 < 0.0 || self.init.q0 < 0.0 || self.init.sigma0 < 0.0
        {
            return fail("initial variances must be nonnegative (p0 positive)");
        }
        if self.method == Method::KalmanOracle && self.experiment.is_misspecified() {
            return fail(
                "kalman-oracle is undefined for misspecified data (no true state process)",
            );
        }
        Ok(())
    }
}

fn split_list(value: &str) -> impl Iterator<Item = &str> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty())
}

fn parse_int<T: FromStr>(value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| HarnessError::usage(format!("expected a nonnegative integer, got '{value}'")))
}

fn parse_bool(value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(HarnessError::usage(format!(
            "expected true or false, got '{other}'"
        ))),
    }
}

/// A real number, or `e^x` meaning `exp(x)`.
pub fn parse_real(value: &str) -> Result<f64> {
    let v = value.trim();
    let bad = || HarnessError::usage(format!("expected a real number or e^x, got '{value}'"));
    let out = match v.strip_prefix("e^") {
        Some(exp) => exp.trim().parse::<f64>().map_err(|_| bad())?.exp(),
        None => v.parse::<f64>().map_err(|_| bad())?,
    };
    if out.is_nan() {
        return Err(bad());
    }
    Ok(out)
}

pub fn parse_real_list(value: &str) -> Result<Vec<f64>> {
    if value.trim() == "grid" {
        return Ok(rho_grid());
    }
    let out: Vec<f64> = split_list(value).map(parse_real).collect::<Result<_>>()?;
    if out.is_empty() {
        return Err(HarnessError::usage("empty list"));
    }
    Ok(out)
}

pub fn parse_seeds(value: &str) -> Result<Vec<u64>> {
    let mut out = Vec::new();
    for part in split_list(value) {
        match part.split_once("..") {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (parse_int(a)?, parse_int(b)?);
                if a > b {
                    return Err(HarnessError::usage(format!("empty seed range '{part}'")));
                }
                out.extend(a..=b);
            }
            None => out.push(parse_int(part)?),
        }
    }
    if out.is_empty() {
        return Err(HarnessError::usage("empty seed list"));
    }
    Ok(out)
}
