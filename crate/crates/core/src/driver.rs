//! Adaptive multilevel driver.
//!
//! Levels `0..=L_min` are seeded with pilot samples. Each iteration refreshes
//! the per-level variance and cost estimates, tops every level up to its
//! optimal sample count, and once no level needs more samples checks the
//! extrapolated bias; if that is too large a finer level is added. A new
//! level gets no pilot of its own: its first sample count comes from variance
//! and cost extrapolated from the level below. Half of the mean-square error
//! budget `ε²` goes to variance and half to bias.
//!
//! Samples are drawn in fixed-size chunks addressed by sample index and
//! merged in index order, so results do not depend on the thread count.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coupling::{LevelParams, LevelSampler};
use crate::error::{Error, Result};
use crate::model::ProblemSpec;
use crate::paths::{simulate_path, BoundaryMode, PathState, TimeGrid, Workspace};
use crate::rng::{NoiseStream, Role, StreamKey};
use crate::scalar::Scalar;
use crate::stats::LevelStats;

/// Samples per work unit. Part of the reproducibility contract: changing it
/// changes the floating-point summation order.
pub const CHUNK_SIZE: u64 = 256;

/// The three estimators compared on the cube problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    /// Coupled differences without splitting, standard exit test.
    Orig,
    /// Splitting, standard exit test.
    New1,
    /// Splitting with the boundary-shifted exit test.
    New2,
}

impl Estimator {
    pub const ALL: [Estimator; 3] = [Estimator::Orig, Estimator::New1, Estimator::New2];

    pub fn name(self) -> &'static str {
        match self {
            Self::Orig => "orig",
            Self::New1 => "new1",
            Self::New2 => "new2",
        }
    }

    pub fn boundary_mode(self) -> BoundaryMode {
        match self {
            Self::Orig | Self::New1 => BoundaryMode::Standard,
            Self::New2 => BoundaryMode::GmShift,
        }
    }

    pub fn splits(self) -> bool {
        !matches!(self, Self::Orig)
    }

    /// Weak order in `h`: ½ without the boundary shift, 1 with it.
    pub fn default_alpha(self) -> f64 {
        match self {
            Self::Orig | Self::New1 => 0.5,
            Self::New2 => 1.0,
        }
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "orig" => Ok(Self::Orig),
            "new1" => Ok(Self::New1),
            "new2" => Ok(Self::New2),
            other => Err(Error::InvalidConfig(format!("unknown estimator `{other}`"))),
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Number of continuations `M_ℓ` for a split path on level `ℓ ≥ 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRule {
    /// `2^ℓ`
    #[default]
    TwoPowEll,
    /// `⌈2^ℓ / √ℓ⌉`
    TwoPowEllOverSqrtEll,
    Constant(u32),
}

impl SplitRule {
    pub fn count(self, level: u32) -> u32 {
        if level == 0 {
            return 1;
        }
        match self {
            Self::TwoPowEll => 1 << level,
            Self::TwoPowEllOverSqrtEll => (f64::from(1u32 << level) / f64::from(level).sqrt()).ceil() as u32,
            Self::Constant(m) => m.max(1),
        }
    }

    /// `M_ℓ` actually used by `estimator`; 1 for the unsplit estimator.
    pub fn for_estimator(self, estimator: Estimator, level: u32) -> u32 {
        if estimator.splits() {
            self.count(level)
        } else {
            1
        }
    }
}

impl FromStr for SplitRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two_pow_ell" | "2^l" => Ok(Self::TwoPowEll),
            "two_pow_ell_over_sqrt_ell" | "2^l/sqrt(l)" => Ok(Self::TwoPowEllOverSqrtEll),
            other => match other.strip_prefix("constant:").map(str::parse::<u32>) {
                Some(Ok(m)) if m >= 1 => Ok(Self::Constant(m)),
                _ => Err(Error::InvalidConfig(format!("unknown split rule `{other}`"))),
            },
        }
    }
}

impl fmt::Display for SplitRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::TwoPowEll => f.write_str("two_pow_ell"),
            Self::TwoPowEllOverSqrtEll => f.write_str("two_pow_ell_over_sqrt_ell"),
            Self::Constant(m) => write!(f, "constant:{m}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlmcConfig<T> {
    /// Target root-mean-square error.
    pub epsilon: T,
    pub h0: T,
    pub refinement: u32,
    pub estimator: Estimator,
    pub split_rule: SplitRule,
    pub min_level: u32,
    pub max_level: u32,
    /// Weak order used by the bias test; defaults per estimator.
    pub alpha_hint: Option<f64>,
    /// Pilot samples on each of the levels `0..=min_level`.
    pub initial_samples: u64,
    pub seed: u64,
}

impl<T: Scalar> MlmcConfig<T> {
    pub fn new(epsilon: T, estimator: Estimator) -> Self {
        Self {
            epsilon,
            h0: T::lit(0.1),
            refinement: 4,
            estimator,
            split_rule: SplitRule::TwoPowEll,
            min_level: 2,
            max_level: 10,
            alpha_hint: None,
            initial_samples: 64,
            seed: 0,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha_hint.unwrap_or_else(|| self.estimator.default_alpha())
    }

    pub fn level_params(&self, level: u32) -> Result<LevelParams<T>> {
        LevelParams::new(
            level,
            self.h0,
            self.refinement,
            self.split_rule.for_estimator(self.estimator, level),
        )
    }

    pub fn validate(&self, spec: &ProblemSpec<T>) -> Result<()> {
        if !(self.epsilon > T::zero()) {
            return Err(Error::InvalidConfig(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.min_level > self.max_level {
            return Err(Error::InvalidConfig(format!(
                "min level {} exceeds max level {}",
                self.min_level, self.max_level
            )));
        }
        if self.initial_samples < 2 {
            return Err(Error::InvalidConfig("need at least 2 pilot samples per level".into()));
        }
        if self.max_level >= 31 {
            return Err(Error::InvalidConfig("max level must be below 31".into()));
        }
        if !(self.alpha() > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha must be positive, got {}",
                self.alpha()
            )));
        }
        self.level_params(0)?;
        TimeGrid::new(spec.horizon(), self.h0)?;
        Ok(())
    }
}

/// Per-level summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord<T> {
    pub level: u32,
    pub h: T,
    pub split_count: u32,
    pub samples: u64,
    pub mean: T,
    pub variance: T,
    pub mean_fine: T,
    pub variance_fine: T,
    pub cost_per_sample: T,
    pub normalized_cost: T,
    pub kurtosis: Option<T>,
    pub stats: LevelStats<T>,
}

impl<T: Scalar> LevelRecord<T> {
    pub fn from_stats(spec: &ProblemSpec<T>, params: &LevelParams<T>, stats: LevelStats<T>) -> Self {
        Self {
            level: params.level,
            h: params.h_fine,
            split_count: params.split_count,
            samples: stats.count,
            mean: stats.mean(),
            variance: stats.variance(),
            mean_fine: stats.mean_fine(),
            variance_fine: stats.variance_fine(),
            cost_per_sample: stats.mean_cost(),
            normalized_cost: stats.normalized_cost(spec, params.h_fine),
            kurtosis: stats.kurtosis().ok(),
            stats,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlmcResult<T> {
    /// `Σ_ℓ Y_ℓ`.
    pub estimate: T,
    pub levels: Vec<LevelRecord<T>>,
    /// Finest level `L`.
    pub chosen_level: u32,
    /// Normal variates over all levels.
    pub total_cost: u64,
    /// `Σ V_ℓ / N_ℓ`.
    pub estimator_variance: T,
    /// Weak order used in the bias test.
    pub alpha_used: f64,
    /// Regression of `log |mean_ℓ|` on `log h_ℓ` over levels `1..=L`.
    pub fitted_alpha: Option<f64>,
    /// Regression of `log V_ℓ` on `log h_ℓ` over levels `1..=L`.
    pub fitted_beta: Option<f64>,
}

/// `N_ℓ = ⌈2 ε⁻² (Σ √(C V)) √(V_ℓ / C_ℓ)⌉`, at least 2.
pub fn optimal_samples<T: Scalar>(epsilon: T, costs: &[T], variances: &[T]) -> Vec<u64> {
    assert_eq!(costs.len(), variances.len());
    let total: T = costs.iter().zip(variances).map(|(&c, &v)| (c * v).sqrt()).sum();
    let scale = T::lit(2.0) * total / (epsilon * epsilon);
    costs
        .iter()
        .zip(variances)
        .map(|(&c, &v)| (scale * (v / c).sqrt()).ceil().to_u64().unwrap_or(u64::MAX).max(2))
        .collect()
}

/// Extrapolated remaining bias `max(|m_L|, |m_{L-1}| / K^α) / (K^α - 1)`
/// compared against `ε/√2`, with `α` the weak order in `h`.
pub fn bias_converged<T: Scalar>(means: &[T], alpha: f64, refinement: u32, epsilon: T) -> bool {
    assert!(means.len() >= 2, "bias test needs at least two levels");
    let factor = T::lit(f64::from(refinement).powf(alpha));
    let last = means[means.len() - 1].abs();
    let prev = means[means.len() - 2].abs() / factor;
    let remainder = last.max(prev) / (factor - T::one());
    remainder <= epsilon / T::lit(2f64.sqrt())
}

/// Decay rate in `h` of `values[ℓ - first_level]`: the least-squares slope
/// of `log |v|` against `log h_ℓ = -ℓ log K + const`. Non-positive and
/// non-finite entries are skipped; `None` with fewer than two usable points.
pub fn fit_rate<T: Scalar>(first_level: u32, values: &[T], refinement: u32) -> Option<f64> {
    let pts: Vec<(f64, f64)> = values
        .iter()
        .enumerate()
        .filter_map(|(i, v)| {
            let v = v.to_f64()?.abs();
            (v > 0.0 && v.is_finite()).then(|| ((first_level as usize + i) as f64, v.ln()))
        })
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(-sxy / sxx / f64::from(refinement).ln())
}

/// Accumulates samples `start..start + count` of one level.
pub fn sample_level<T: Scalar>(
    spec: &ProblemSpec<T>,
    params: LevelParams<T>,
    mode: BoundaryMode,
    seed: u64,
    start: u64,
    count: u64,
) -> Result<LevelStats<T>> {
    // validate once up front so worker errors are simulation errors only
    LevelSampler::new(spec, params, mode)?;
    let chunks: Vec<(u64, u64)> = (0..count.div_ceil(CHUNK_SIZE))
        .map(|c| {
            let lo = start + c * CHUNK_SIZE;
            (lo, (lo + CHUNK_SIZE).min(start + count))
        })
        .collect();
    let parts = chunks
        .into_par_iter()
        .map(|(lo, hi)| {
            let mut sampler = LevelSampler::new(spec, params, mode)?;
            let mut stats = LevelStats::new();
            for n in lo..hi {
                stats.record(&sampler.sample(seed, n)?);
            }
            Ok(stats)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.iter().fold(LevelStats::new(), |acc, s| acc.merged(s)))
}

/// Plain Monte Carlo at a single timestep `h`, for comparisons. Sample `n`
/// uses stream `(seed, level_tag, n)`; the fine value and difference are both
/// the path payoff.
pub fn sample_single_level<T: Scalar>(
    spec: &ProblemSpec<T>,
    h: T,
    mode: BoundaryMode,
    seed: u64,
    level_tag: u32,
    count: u64,
) -> Result<LevelStats<T>> {
    let grid = TimeGrid::new(spec.horizon(), h)?;
    let parts = (0..count.div_ceil(CHUNK_SIZE))
        .into_par_iter()
        .map(|c| {
            let mut ws = Workspace::new(spec);
            let mut stats = LevelStats::new();
            for n in c * CHUNK_SIZE..((c + 1) * CHUNK_SIZE).min(count) {
                let mut noise = NoiseStream::new(StreamKey::new(seed, level_tag, n, Role::Joint));
                let out = simulate_path(spec, PathState::initial(spec, grid), mode, &mut noise, &mut ws)?;
                stats.record_values(out.payoff, out.payoff, out.rng_cost);
            }
            Ok(stats)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.iter().fold(LevelStats::new(), |acc, s| acc.merged(s)))
}

/// Fixed-sample diagnostics on `levels`, as used for convergence plots.
pub fn level_diagnostics<T: Scalar>(
    spec: &ProblemSpec<T>,
    config: &MlmcConfig<T>,
    levels: impl IntoIterator<Item = u32>,
    samples: u64,
) -> Result<Vec<LevelRecord<T>>> {
    TimeGrid::new(spec.horizon(), config.h0)?;
    levels
        .into_iter()
        .map(|l| {
            let params = config.level_params(l)?;
            let stats = sample_level(spec, params, config.estimator.boundary_mode(), config.seed, 0, samples)?;
            Ok(LevelRecord::from_stats(spec, &params, stats))
        })
        .collect()
}

/// Variance and cost per level as used for sample allocation.
///
/// Levels without data yet take `V_{ℓ-1} / K^β` and `K · C_{ℓ-1}`. Sampled
/// variances on levels `ℓ ≥ 2` are floored at `½ V_{ℓ-1} / K^β`, which keeps
/// a few unlucky samples on a fine level from starving it.
fn allocation_estimates<T: Scalar>(stats: &[LevelStats<T>], refinement: u32) -> (Vec<T>, Vec<T>) {
    let k = T::from_count(u64::from(refinement));
    let sampled: Vec<T> = stats
        .iter()
        .take_while(|s| s.count >= 2)
        .map(LevelStats::variance)
        .collect();
    let beta = fit_rate(1, sampled.get(1..).unwrap_or(&[]), refinement)
        .unwrap_or(0.5)
        .max(0.5);
    let decay = T::lit(f64::from(refinement).powf(beta));
    let half = T::lit(0.5);
    let mut costs: Vec<T> = Vec::with_capacity(stats.len());
    let mut variances: Vec<T> = Vec::with_capacity(stats.len());
    for (l, s) in stats.iter().enumerate() {
        if s.count >= 2 {
            let mut v = s.variance();
            if l >= 2 {
                v = v.max(half * variances[l - 1] / decay);
            }
            variances.push(v);
            costs.push(s.mean_cost().max(T::one()));
        } else {
            // the pilot levels always have data, so l ≥ 1 here
            variances.push(variances[l - 1] / decay);
            costs.push(costs[l - 1] * k);
        }
    }
    (costs, variances)
}

/// Runs the adaptive estimator to RMS accuracy `config.epsilon`.
pub fn run<T: Scalar>(spec: &ProblemSpec<T>, config: &MlmcConfig<T>) -> Result<MlmcResult<T>> {
    config.validate(spec)?;
    let mode = config.estimator.boundary_mode();
    let alpha = config.alpha();
    let mut params: Vec<LevelParams<T>> = (0..=config.min_level)
        .map(|l| config.level_params(l))
        .collect::<Result<_>>()?;
    let mut stats: Vec<LevelStats<T>> = vec![LevelStats::new(); params.len()];
    let mut extra: Vec<u64> = vec![config.initial_samples; params.len()];

    loop {
        for ((p, s), dn) in params.iter().zip(stats.iter_mut()).zip(&extra) {
            if *dn > 0 {
                let more = sample_level(spec, *p, mode, config.seed, s.count, *dn)?;
                s.merge(&more);
            }
        }
        let (costs, variances) = allocation_estimates(&stats, config.refinement);
        let target = optimal_samples(config.epsilon, &costs, &variances);
        extra = target
            .iter()
            .zip(&stats)
            .map(|(n, s)| n.saturating_sub(s.count))
            .collect();
        if extra.iter().any(|&dn| dn > 0) {
            continue;
        }
        let means: Vec<T> = stats.iter().map(LevelStats::mean).collect();
        if bias_converged(&means, alpha, config.refinement, config.epsilon) {
            break;
        }
        let finest = params.len() as u32 - 1;
        if finest >= config.max_level {
            return Err(Error::LevelCap {
                max_level: config.max_level as usize,
                estimate: means.iter().copied().sum::<T>().to_f64().unwrap_or(f64::NAN),
            });
        }
        params.push(config.level_params(finest + 1)?);
        stats.push(LevelStats::new());
        let (costs, variances) = allocation_estimates(&stats, config.refinement);
        let target = optimal_samples(config.epsilon, &costs, &variances);
        extra = target
            .iter()
            .zip(&stats)
            .map(|(n, s)| n.saturating_sub(s.count))
            .collect();
    }

    let levels: Vec<LevelRecord<T>> = params
        .iter()
        .zip(&stats)
        .map(|(p, s)| LevelRecord::from_stats(spec, p, *s))
        .collect();
    let means: Vec<T> = levels.iter().map(|r| r.mean).collect();
    let variances: Vec<T> = levels.iter().map(|r| r.variance).collect();
    Ok(MlmcResult {
        estimate: means.iter().copied().sum(),
        chosen_level: levels.len() as u32 - 1,
        total_cost: stats.iter().map(|s| s.total_rng_cost).sum(),
        estimator_variance: levels.iter().map(|r| r.variance / T::from_count(r.samples)).sum(),
        alpha_used: alpha,
        fitted_alpha: fit_rate(1, &means[1..], config.refinement),
        fitted_beta: fit_rate(1, &variances[1..], config.refinement),
        levels,
    })
}
