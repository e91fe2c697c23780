//! Coupled fine/coarse level samples with path splitting.
//!
//! A fine path (step `h_ℓ`) and a coarse path (step `h_{ℓ-1} = K h_ℓ`) are
//! driven by the same Brownian increments until the end of the first coarse
//! step in which either has stopped. The survivor, if any, is then duplicated
//! into `M_ℓ` copies that continue on independent noise, and its contribution
//! is the average of their payoffs. This replaces the survivor's payoff by an
//! estimate of its conditional expectation given the shared path, which is
//! what makes the level variance decay like `h_ℓ` instead of `h_ℓ^{1/2}`.
//!
//! With `M_ℓ = 1` the same code reproduces the unsplit coupled estimator.

use crate::error::{Error, Result};
use crate::model::ProblemSpec;
use crate::paths::{advance, simulate_path, BoundaryMode, PathState, TimeGrid, Workspace};
use crate::rng::{NoiseSource, NoiseStream, Role, StreamKey};
use crate::scalar::Scalar;

/// Timesteps and split count of one level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelParams<T> {
    pub level: u32,
    pub h_fine: T,
    /// `None` on level 0.
    pub h_coarse: Option<T>,
    pub refinement: u32,
    /// `M_ℓ`; ignored on level 0.
    pub split_count: u32,
}

impl<T: Scalar> LevelParams<T> {
    /// `h_ℓ = h₀ / K^ℓ`, `h_{ℓ-1} = h₀ / K^{ℓ-1}`.
    pub fn new(level: u32, h0: T, refinement: u32, split_count: u32) -> Result<Self> {
        if refinement < 2 {
            return Err(Error::InvalidConfig(format!(
                "refinement factor must be at least 2, got {refinement}"
            )));
        }
        if split_count == 0 {
            return Err(Error::InvalidConfig("split count must be at least 1".into()));
        }
        if !(h0 > T::zero()) {
            return Err(Error::InvalidConfig(format!("h0 must be positive, got {h0}")));
        }
        let k = T::from_count(u64::from(refinement));
        let h_at = |l: u32| h0 / k.powi(l as i32);
        Ok(Self {
            level,
            h_fine: h_at(level),
            h_coarse: (level > 0).then(|| h_at(level - 1)),
            refinement,
            split_count,
        })
    }
}

/// Which path of the pair, if any, was split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitSide {
    Neither,
    Fine,
    Coarse,
}

/// One coupled sample `P̄_ℓ - P̄_{ℓ-1}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelSample<T> {
    pub fine_value: T,
    /// Zero on level 0.
    pub coarse_value: T,
    pub diff: T,
    /// Normal variates for the joint phase plus every continuation.
    pub rng_cost: u64,
    pub split: SplitSide,
}

/// `K` fine Brownian increments and their sum, the coarse increment.
#[derive(Debug, Clone)]
pub struct CoupledIncrements<T> {
    fine: Vec<T>,
    coarse: Vec<T>,
    noise_dim: usize,
}

impl<T: Scalar> CoupledIncrements<T> {
    pub fn new(refinement: usize, noise_dim: usize) -> Self {
        Self {
            fine: vec![T::zero(); refinement * noise_dim],
            coarse: vec![T::zero(); noise_dim],
            noise_dim,
        }
    }

    /// Builds from explicit fine increments (concatenated, `K · noise_dim`).
    pub fn from_fine(fine: Vec<T>, noise_dim: usize) -> Self {
        assert!(noise_dim > 0 && fine.len().is_multiple_of(noise_dim));
        let mut out = Self {
            coarse: vec![T::zero(); noise_dim],
            fine,
            noise_dim,
        };
        out.sum_coarse();
        out
    }

    /// Draws `K` independent `N(0, h_fine I)` vectors.
    pub fn draw<N: NoiseSource>(&mut self, noise: &mut N, h_fine: T) {
        noise.fill_scaled(h_fine.sqrt(), &mut self.fine);
        self.sum_coarse();
    }

    fn sum_coarse(&mut self) {
        self.coarse.iter_mut().for_each(|c| *c = T::zero());
        for block in self.fine.chunks_exact(self.noise_dim) {
            for (c, &w) in self.coarse.iter_mut().zip(block) {
                *c = *c + w;
            }
        }
    }

    pub fn refinement(&self) -> usize {
        self.fine.len() / self.noise_dim
    }

    pub fn fine(&self, k: usize) -> &[T] {
        &self.fine[k * self.noise_dim..(k + 1) * self.noise_dim]
    }

    pub fn coarse(&self) -> &[T] {
        &self.coarse
    }

    /// Normal variates consumed by one draw.
    pub fn cost(&self) -> u64 {
        self.fine.len() as u64
    }
}

/// Draws one block of coupled increments: `(fine increments, coarse increment)`.
pub fn coupled_increments<T: Scalar, N: NoiseSource>(
    noise: &mut N,
    refinement: usize,
    h_fine: T,
    noise_dim: usize,
) -> (Vec<Vec<T>>, Vec<T>) {
    let mut inc = CoupledIncrements::new(refinement, noise_dim);
    inc.draw(noise, h_fine);
    let fine = (0..refinement).map(|k| inc.fine(k).to_vec()).collect();
    (fine, inc.coarse)
}

/// Reusable per-thread sampler for one level.
pub struct LevelSampler<'a, T> {
    spec: &'a ProblemSpec<T>,
    params: LevelParams<T>,
    mode: BoundaryMode,
    fine_grid: TimeGrid<T>,
    coarse_grid: Option<TimeGrid<T>>,
    increments: CoupledIncrements<T>,
    ws: Workspace<T>,
}

impl<'a, T: Scalar> LevelSampler<'a, T> {
    /// Fails if the horizon is not a whole number of coarse steps.
    pub fn new(spec: &'a ProblemSpec<T>, params: LevelParams<T>, mode: BoundaryMode) -> Result<Self> {
        let fine_grid = TimeGrid::new(spec.horizon(), params.h_fine)?;
        let coarse_grid = params.h_coarse.map(|h| TimeGrid::new(spec.horizon(), h)).transpose()?;
        Ok(Self {
            spec,
            params,
            mode,
            fine_grid,
            coarse_grid,
            increments: CoupledIncrements::new(params.refinement as usize, spec.noise_dim()),
            ws: Workspace::new(spec),
        })
    }

    pub fn params(&self) -> &LevelParams<T> {
        &self.params
    }

    /// Draws the sample whose noise is addressed by `(seed, level, sample_index)`.
    pub fn sample(&mut self, seed: u64, sample_index: u64) -> Result<LevelSample<T>> {
        let key = StreamKey::new(seed, self.params.level, sample_index, Role::Joint);
        let mut joint = NoiseStream::new(key);
        let spec = self.spec;

        let Some(coarse_grid) = self.coarse_grid else {
            let out = simulate_path(
                spec,
                PathState::initial(spec, self.fine_grid),
                self.mode,
                &mut joint,
                &mut self.ws,
            )?;
            return Ok(LevelSample {
                fine_value: out.payoff,
                coarse_value: T::zero(),
                diff: out.payoff,
                rng_cost: out.rng_cost,
                split: SplitSide::Neither,
            });
        };

        // joint phase, one coarse step per iteration
        let mut fine = PathState::initial(spec, self.fine_grid);
        let mut coarse = PathState::initial(spec, coarse_grid);
        let mut cost = 0u64;
        let h_fine = self.params.h_fine;
        loop {
            self.increments.draw(&mut joint, h_fine);
            cost += self.increments.cost();
            for k in 0..self.increments.refinement() {
                if !fine.alive {
                    break;
                }
                advance(spec, &mut fine, self.increments.fine(k), self.mode, &mut self.ws)?;
            }
            advance(spec, &mut coarse, self.increments.coarse(), self.mode, &mut self.ws)?;
            if !fine.alive || !coarse.alive {
                break;
            }
        }
        debug_assert!(!(fine.alive && coarse.alive));

        // split phase: at most one of the two is still alive
        let split = match (fine.alive, coarse.alive) {
            (true, _) => SplitSide::Fine,
            (_, true) => SplitSide::Coarse,
            _ => SplitSide::Neither,
        };
        let fine_value = self.settle(fine, key, Role::FineSplit, &mut cost)?;
        let coarse_value = self.settle(coarse, key, Role::CoarseSplit, &mut cost)?;
        Ok(LevelSample {
            fine_value,
            coarse_value,
            diff: fine_value - coarse_value,
            rng_cost: cost,
            split,
        })
    }

    /// Payoff of a stopped path, or the mean over `M_ℓ` independent
    /// continuations of a live one.
    fn settle(&mut self, state: PathState<T>, key: StreamKey, role: fn(u32) -> Role, cost: &mut u64) -> Result<T> {
        if !state.alive {
            return Ok(state.finish(self.spec).payoff);
        }
        let m = self.params.split_count;
        let mut sum = T::zero();
        for j in 0..m {
            let mut copy = state.clone();
            copy.rng_cost = 0;
            let mut noise = NoiseStream::new(key.with_role(role(j)));
            let out = simulate_path(self.spec, copy, self.mode, &mut noise, &mut self.ws)?;
            *cost += out.rng_cost;
            sum = sum + out.payoff;
        }
        Ok(sum / T::from_count(u64::from(m)))
    }
}

/// Convenience wrapper building a one-off [`LevelSampler`].
pub fn level_sample<T: Scalar>(
    spec: &ProblemSpec<T>,
    params: LevelParams<T>,
    mode: BoundaryMode,
    seed: u64,
    sample_index: u64,
) -> Result<LevelSample<T>> {
    LevelSampler::new(spec, params, mode)?.sample(seed, sample_index)
}

/// Result of [`split_variance_demo`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitVariance {
    pub variance: f64,
    /// Standard error of `variance`, from the sample fourth moment.
    pub standard_error: f64,
}

/// Sample variance of `f̄ = M⁻¹ Σ_m (W + Z_m)` with `W, Z_m` i.i.d. standard
/// normal; its expectation is `1 + 1/M`.
pub fn split_variance_demo<N: NoiseSource>(splits: u32, noise: &mut N, n_samples: u64) -> SplitVariance {
    assert!(splits >= 1 && n_samples >= 2);
    let mut values = Vec::with_capacity(n_samples as usize);
    for _ in 0..n_samples {
        let w: f64 = noise.next_normal();
        let z_sum: f64 = (0..splits).map(|_| noise.next_normal::<f64>()).sum();
        values.push(w + z_sum / f64::from(splits));
    }
    let n = n_samples as f64;
    let mean = values.iter().sum::<f64>() / n;
    let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m4 = values.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    SplitVariance {
        variance: m2 * n / (n - 1.0),
        standard_error: ((m4 - m2 * m2) / n).sqrt(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ExitTimeProfile, FeynmanKacData, Preset};

    fn cube3d() -> ProblemSpec<f64> {
        Preset::Cube3d.build(ExitTimeProfile::TerminalTime)
    }

    #[test]
    fn level_params_timesteps() {
        let p = LevelParams::new(3, 0.1, 4, 8).unwrap();
        assert_eq!(p.h_fine, 0.1 / 64.0);
        assert_eq!(p.h_coarse, Some(0.1 / 16.0));
        assert_eq!(p.h_coarse.unwrap(), 4.0 * p.h_fine);
        assert_eq!(LevelParams::new(0, 0.1, 4, 1).unwrap().h_coarse, None);
        assert!(LevelParams::new(1, 0.1, 1, 1).is_err());
        assert!(LevelParams::new(1, 0.1, 4, 0).is_err());
    }

    #[test]
    fn coarse_increment_is_the_sum() {
        let inc = CoupledIncrements::<f64>::from_fine(vec![0.1, -0.2, 0.3, 0.1], 1);
        assert!((inc.coarse()[0] - 0.3).abs() < 1e-15);
        let zero = CoupledIncrements::<f64>::from_fine(vec![0.0; 12], 3);
        assert_eq!(zero.coarse(), &[0.0; 3]);
    }

    #[test]
    fn coupled_increments_variance() {
        let mut noise = NoiseStream::new(StreamKey::new(11, 1, 0, Role::Joint));
        let n = 100_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let (fine, coarse) = coupled_increments::<f64, _>(&mut noise, 4, 0.025, 1);
            assert_eq!(fine.len(), 4);
            let direct: f64 = fine.iter().map(|v| v[0]).sum();
            assert_eq!(direct, coarse[0]);
            sum += coarse[0];
            sum_sq += coarse[0] * coarse[0];
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        // se of a normal sample variance: σ² √(2/n)
        let se = 0.1 * (2.0 / n as f64).sqrt();
        assert!((var - 0.1).abs() < 3.0 * se, "variance {var}");
    }

    #[test]
    fn constant_payoff_telescopes_to_zero() {
        let spec = cube3d().with_feynman_kac(FeynmanKacData::constant_terminal(0.7));
        for (level, mode) in [
            (0, BoundaryMode::Standard),
            (1, BoundaryMode::Standard),
            (3, BoundaryMode::GmShift),
        ] {
            let params = LevelParams::new(level, 0.1, 4, 1 << level).unwrap();
            let mut sampler = LevelSampler::new(&spec, params, mode).unwrap();
            for n in 0..300 {
                let s = sampler.sample(4, n).unwrap();
                if level == 0 {
                    assert_eq!(s.diff, 0.7);
                } else {
                    assert!(s.diff.abs() < 1e-15, "{}", s.diff);
                }
            }
        }
    }

    #[test]
    fn level_zero_is_a_single_path() {
        let spec = cube3d();
        let params = LevelParams::new(0, 0.1, 4, 1).unwrap();
        let mut sampler = LevelSampler::new(&spec, params, BoundaryMode::Standard).unwrap();
        let mut ws = Workspace::new(&spec);
        let grid = TimeGrid::new(1.0, 0.1).unwrap();
        for n in 0..200 {
            let s = sampler.sample(8, n).unwrap();
            let mut noise = NoiseStream::new(StreamKey::new(8, 0, n, Role::Joint));
            let direct = simulate_path(
                &spec,
                PathState::initial(&spec, grid),
                BoundaryMode::Standard,
                &mut noise,
                &mut ws,
            )
            .unwrap();
            assert_eq!(s.diff, s.fine_value);
            assert_eq!(s.coarse_value, 0.0);
            assert_eq!(s.fine_value, direct.payoff);
            assert_eq!(s.rng_cost, direct.rng_cost);
        }
    }

    #[test]
    fn split_sides() {
        let spec = cube3d();
        let params = LevelParams::new(2, 0.1, 4, 4).unwrap();
        let seen = |mode| {
            let mut sampler = LevelSampler::new(&spec, params, mode).unwrap();
            let mut saw = [false; 3];
            for n in 0..2000 {
                let s = sampler.sample(1, n).unwrap();
                saw[s.split as usize] = true;
                // joint cost is a whole number of coarse blocks
                if s.split == SplitSide::Neither {
                    assert_eq!(s.rng_cost % 12, 0);
                }
            }
            saw
        };
        // Brownian fine and coarse paths coincide at coarse times, so with the
        // plain boundary the coarse path cannot stop while the fine one survives
        assert_eq!(seen(BoundaryMode::Standard), [true, false, true]);
        assert_eq!(seen(BoundaryMode::GmShift), [true, true, true]);
    }

    #[test]
    fn samples_are_reproducible() {
        let spec = cube3d();
        let params = LevelParams::new(2, 0.1, 4, 4).unwrap();
        let a: Vec<_> = (0..50)
            .map(|n| level_sample(&spec, params, BoundaryMode::GmShift, 3, n).unwrap())
            .collect();
        let mut sampler = LevelSampler::new(&spec, params, BoundaryMode::GmShift).unwrap();
        for n in (0..50).rev() {
            assert_eq!(sampler.sample(3, n).unwrap(), a[n as usize]);
        }
    }

    #[test]
    fn split_variance_small_m() {
        let mut noise = NoiseStream::new(StreamKey::new(5, 0, 0, Role::Joint));
        let r = split_variance_demo(1, &mut noise, 200_000);
        assert!((r.variance - 2.0).abs() < 3.0 * r.standard_error, "{r:?}");
        let r = split_variance_demo(4, &mut noise, 200_000);
        assert!((r.variance - 1.25).abs() < 3.0 * r.standard_error, "{r:?}");
    }

    proptest::proptest! {
        #[test]
        fn samples_depend_only_on_their_address(
            seed in 0u64..1000,
            n in 0u64..1_000_000,
            level in 1u32..4,
            m in 1u32..9,
            shifted in proptest::bool::ANY,
        ) {
            let spec = cube3d();
            let mode = if shifted { BoundaryMode::GmShift } else { BoundaryMode::Standard };
            let params = LevelParams::new(level, 0.1, 4, m).unwrap();
            let a = level_sample(&spec, params, mode, seed, n).unwrap();
            let mut sampler = LevelSampler::new(&spec, params, mode).unwrap();
            let _ = sampler.sample(seed, n.wrapping_add(1)).unwrap();
            let b = sampler.sample(seed, n).unwrap();
            proptest::prop_assert_eq!(a.diff, b.diff);
            proptest::prop_assert_eq!(a.rng_cost, b.rng_cost);
            proptest::prop_assert_eq!(a.diff, a.fine_value - a.coarse_value);
            for v in [a.fine_value, a.coarse_value] {
                proptest::prop_assert!((0.0..=1.0).contains(&v));
            }
            if !shifted {
                proptest::prop_assert!(a.split != SplitSide::Fine);
            }
        }
    }
}
