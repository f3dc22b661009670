//! Adaptive filtering for linear state-space models whose state and
//! observation noise variances are unknown and drift over time.
//!
//! - [`viking`]: the variational filter tracking the state together with
//!   gaussian beliefs on the log observation variance and on the latent
//!   driving the state noise.
//! - [`kalman`]: the classical filter with known variances, used as a
//!   baseline and as the limit of the variational filter when the variance
//!   beliefs are certain.
//! - [`transforms`]: the noise map `Q = f(b)` and the derivatives used by the
//!   `b` update.
//! - [`datagen`]: synthetic benchmarks with recorded ground truth.

pub mod datagen;
pub mod error;
pub mod kalman;
pub mod linalg;
pub mod rng;
pub mod trace;
pub mod transforms;
pub mod viking;

pub use error::{Error, Result};
pub use kalman::{kalman_run, kalman_step, GaussianState, Schedule};
pub use trace::StepRecord;
pub use transforms::{NoiseTransform, TransformKind};
pub use viking::{viking_run, viking_step, VarianceBeliefs, VikingHyper, VikingInit, VikingState};
