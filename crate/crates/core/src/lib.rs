//! Multilevel Monte Carlo estimation of expected exit times and
//! Feynman-Kac functionals of stopped diffusions.
//!
//! The core is generic over the floating-point type through [`Scalar`];
//! the `*64` / `*32` aliases below fix it for everyday use.
//!
//! * [`model`]: SDE coefficients, domains and payoff data, plus presets.
//! * [`paths`]: Euler-Maruyama paths with standard or boundary-shifted exit.
//! * [`coupling`]: coupled fine/coarse samples with path splitting.
//! * [`stats`]: mergeable per-level moments, kurtosis and cost.
//! * [`driver`]: the adaptive level/sample-count loop.
//! * [`reference`]: analytic and finite-difference reference solutions.
//! * [`rng`]: key-addressed noise streams.

// validity checks are written as `!(x > 0)` so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coupling;
pub mod driver;
mod error;
pub mod model;
pub mod paths;
pub mod reference;
pub mod rng;
mod scalar;
pub mod stats;

pub use coupling::{level_sample, LevelParams, LevelSample, LevelSampler, SplitSide};
pub use driver::{run, Estimator, LevelRecord, MlmcConfig, MlmcResult, SplitRule};
pub use error::{Error, Result};
pub use model::{DomainGeometry, ExitTimeProfile, FeynmanKacData, Preset, ProblemSpec};
pub use paths::{BoundaryMode, PathOutcome, PathState, TimeGrid, GM_C0};
pub use reference::SeriesTruncation;
pub use rng::{NoiseSource, NoiseStream, Role, StreamKey};
pub use scalar::Scalar;
pub use stats::LevelStats;

pub type ProblemSpec64 = ProblemSpec<f64>;
pub type MlmcConfig64 = MlmcConfig<f64>;
pub type MlmcResult64 = MlmcResult<f64>;
pub type LevelStats64 = LevelStats<f64>;
pub type LevelSample64 = LevelSample<f64>;

pub type ProblemSpec32 = ProblemSpec<f32>;
pub type MlmcConfig32 = MlmcConfig<f32>;
pub type MlmcResult32 = MlmcResult<f32>;
pub type LevelStats32 = LevelStats<f32>;
