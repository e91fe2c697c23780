//! Per-level moment accumulation.
//!
//! Raw power sums are kept and centred only when read. Merging two
//! accumulators is plain addition, so thread-local partial results can be
//! combined in any grouping. The price is cancellation when the mean is
//! large relative to the spread; negative variances produced that way are
//! clamped to zero and flagged.

use serde::{Deserialize, Serialize};

use crate::coupling::LevelSample;
use crate::error::{Error, Result};
use crate::model::ProblemSpec;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelStats<T> {
    pub count: u64,
    /// `Σx, Σx², Σx³, Σx⁴` of the level differences.
    pub sums: [T; 4],
    /// `Σy, Σy²` of the fine values.
    pub fine_sums: [T; 2],
    pub total_rng_cost: u64,
}

impl<T: Scalar> Default for LevelStats<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> LevelStats<T> {
    pub fn new() -> Self {
        Self {
            count: 0,
            sums: [T::zero(); 4],
            fine_sums: [T::zero(); 2],
            total_rng_cost: 0,
        }
    }

    pub fn record(&mut self, sample: &LevelSample<T>) {
        self.record_values(sample.diff, sample.fine_value, sample.rng_cost);
    }

    pub fn record_values(&mut self, diff: T, fine: T, rng_cost: u64) {
        let d2 = diff * diff;
        self.count += 1;
        self.sums[0] = self.sums[0] + diff;
        self.sums[1] = self.sums[1] + d2;
        self.sums[2] = self.sums[2] + d2 * diff;
        self.sums[3] = self.sums[3] + d2 * d2;
        self.fine_sums[0] = self.fine_sums[0] + fine;
        self.fine_sums[1] = self.fine_sums[1] + fine * fine;
        self.total_rng_cost += rng_cost;
    }

    pub fn merge(&mut self, other: &Self) {
        self.count += other.count;
        for (a, b) in self.sums.iter_mut().zip(other.sums) {
            *a = *a + b;
        }
        for (a, b) in self.fine_sums.iter_mut().zip(other.fine_sums) {
            *a = *a + b;
        }
        self.total_rng_cost += other.total_rng_cost;
    }

    pub fn merged(mut self, other: &Self) -> Self {
        self.merge(other);
        self
    }

    fn n(&self) -> T {
        T::from_count(self.count)
    }

    pub fn mean(&self) -> T {
        if self.count == 0 {
            return T::zero();
        }
        self.sums[0] / self.n()
    }

    fn raw_variance(&self) -> T {
        if self.count < 2 {
            return T::zero();
        }
        let n = self.n();
        (self.sums[1] - self.sums[0] * self.sums[0] / n) / (n - T::one())
    }

    /// Unbiased sample variance of the differences, clamped at zero.
    pub fn variance(&self) -> T {
        self.raw_variance().max(T::zero())
    }

    /// True when the raw variance came out negative and was clamped.
    pub fn variance_clamped(&self) -> bool {
        self.raw_variance() < T::zero()
    }

    /// `sqrt(variance / N)`.
    pub fn standard_error(&self) -> T {
        if self.count == 0 {
            return T::infinity();
        }
        (self.variance() / self.n()).sqrt()
    }

    pub fn mean_fine(&self) -> T {
        if self.count == 0 {
            return T::zero();
        }
        self.fine_sums[0] / self.n()
    }

    pub fn variance_fine(&self) -> T {
        if self.count < 2 {
            return T::zero();
        }
        let n = self.n();
        ((self.fine_sums[1] - self.fine_sums[0] * self.fine_sums[0] / n) / (n - T::one())).max(T::zero())
    }

    /// Average number of normal variates per sample.
    pub fn mean_cost(&self) -> T {
        if self.count == 0 {
            return T::zero();
        }
        T::from_count(self.total_rng_cost) / self.n()
    }

    /// Central fourth moment over squared central second moment.
    pub fn kurtosis(&self) -> Result<T> {
        if self.count < 4 {
            return Err(Error::UndefinedKurtosis("fewer than four samples"));
        }
        let n = self.n();
        let m = self.sums[0] / n;
        let [s1, s2, s3, s4] = self.sums.map(|s| s / n);
        let m2 = s2 - m * s1;
        // relative to the raw second moment, anything this small is rounding noise
        if !(m2 > T::lit(1e-12) * s2) {
            return Err(Error::UndefinedKurtosis("zero variance"));
        }
        let four = T::lit(4.0);
        let six = T::lit(6.0);
        let three = T::lit(3.0);
        let m4 = s4 - four * m * s3 + six * m * m * s2 - three * m * m * m * m;
        Ok(m4 / (m2 * m2))
    }

    /// Mean cost as a fraction of the `noise_dim · T / h` normals one path
    /// needs to reach the horizon with step `h`.
    pub fn normalized_cost(&self, spec: &ProblemSpec<T>, h: T) -> T {
        let baseline = T::from_count(spec.noise_dim() as u64) * spec.horizon() / h;
        self.mean_cost() / baseline
    }
}
