//! Single-path Euler-Maruyama simulation of a stopped diffusion.
//!
//! The path is piecewise constant between grid times, so the running payoff
//! and the discount integral use the left-endpoint rule. Exit is checked only
//! at grid times `t_n`, n ≥ 1; a point on the boundary counts as exited.
//!
//! With [`BoundaryMode::GmShift`] the domain is shrunk by the
//! Gobet-Menozzi band `c₀ ‖nᵀb‖₂ √h`, which removes the leading `O(√h)` bias
//! caused by excursions that leave and re-enter the domain within a step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{discount_increment, ProblemSpec};
use crate::rng::NoiseSource;
use crate::scalar::Scalar;

/// Boundary-shift constant `c₀ = -ζ(1/2)/√(2π)`, truncated to four figures.
pub const GM_C0: f64 = 0.5826;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryMode {
    #[default]
    Standard,
    GmShift,
}

/// Uniform grid on `[0, horizon]`. Times are derived from the integer step
/// index, never accumulated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid<T> {
    h: T,
    steps: u64,
    horizon: T,
}

impl<T: Scalar> TimeGrid<T> {
    /// Fails unless `horizon` is an integer multiple of `h` (relative
    /// tolerance 1e-9).
    pub fn new(horizon: T, h: T) -> Result<Self> {
        if !(h > T::zero()) || !h.is_finite() {
            return Err(Error::InvalidConfig(format!("timestep must be positive, got {h}")));
        }
        let ratio = horizon / h;
        let steps = ratio.round();
        if steps < T::one() || (ratio - steps).abs() > T::lit(1e-9) * steps.max(T::one()) {
            return Err(Error::InvalidConfig(format!(
                "horizon {horizon} is not an integer multiple of timestep {h}"
            )));
        }
        let steps = steps
            .to_u64()
            .ok_or_else(|| Error::InvalidConfig("too many timesteps".into()))?;
        Ok(Self { h, steps, horizon })
    }

    #[inline]
    pub fn h(&self) -> T {
        self.h
    }

    #[inline]
    pub fn steps(&self) -> u64 {
        self.steps
    }

    #[inline]
    pub fn horizon(&self) -> T {
        self.horizon
    }

    /// `t_n`; exactly `horizon` at `n = steps`.
    #[inline]
    pub fn time(&self, n: u64) -> T {
        if n == self.steps {
            self.horizon
        } else {
            self.horizon * T::from_count(n) / T::from_count(self.steps)
        }
    }
}

/// Partially simulated path: position, grid time and the accumulated
/// discount and running payoff.
#[derive(Debug, Clone, PartialEq)]
pub struct PathState<T> {
    pub position: Vec<T>,
    pub step: u64,
    pub grid: TimeGrid<T>,
    /// `Ê(0, t_n)`.
    pub discount: T,
    /// `Σ Ê f h` over completed steps.
    pub running_payoff: T,
    pub alive: bool,
    /// True once the path has been declared outside the domain.
    pub exited: bool,
    /// Normal variates consumed so far.
    pub rng_cost: u64,
}

impl<T: Scalar> PathState<T> {
    pub fn initial(spec: &ProblemSpec<T>, grid: TimeGrid<T>) -> Self {
        Self {
            position: spec.start().to_vec(),
            step: 0,
            grid,
            discount: T::one(),
            running_payoff: T::zero(),
            alive: true,
            exited: false,
            rng_cost: 0,
        }
    }

    #[inline]
    pub fn time(&self) -> T {
        self.grid.time(self.step)
    }

    /// Terminates the path and returns its payoff `Σ Ê f h + Ê g(X, τ)`.
    pub fn finish(mut self, spec: &ProblemSpec<T>) -> PathOutcome<T> {
        self.alive = false;
        let t = self.time();
        let payoff = self.running_payoff + self.discount * (spec.feynman_kac().terminal)(&self.position, t);
        PathOutcome {
            exit_time: t,
            steps: self.step,
            exited: self.exited,
            payoff,
            rng_cost: self.rng_cost,
            exit_state: self.position,
        }
    }
}

/// A completed path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathOutcome<T> {
    /// `τ̂`, a grid time in `(0, T]`.
    pub exit_time: T,
    /// `τ̂ / h`.
    pub steps: u64,
    /// False when the path survived to the horizon.
    pub exited: bool,
    pub exit_state: Vec<T>,
    pub payoff: T,
    pub rng_cost: u64,
}

/// Scratch buffers for stepping; one per thread.
#[derive(Debug, Clone)]
pub struct Workspace<T> {
    drift: Vec<T>,
    diffusion: Vec<T>,
    normal: Vec<T>,
    pub(crate) dw: Vec<T>,
}

impl<T: Scalar> Workspace<T> {
    pub fn new(spec: &ProblemSpec<T>) -> Self {
        let (d, m) = (spec.dim(), spec.noise_dim());
        Self {
            drift: vec![T::zero(); d],
            diffusion: vec![T::zero(); d * m],
            normal: vec![T::zero(); d],
            dw: vec![T::zero(); m],
        }
    }
}

/// One Euler-Maruyama step of size `state.grid.h()` driven by `dw`.
///
/// The running payoff is credited with `Ê f(x_n, t_n) h` before the discount
/// is multiplied by `exp(-V(x_n, t_n) h)`.
pub fn em_step<T: Scalar>(spec: &ProblemSpec<T>, state: &mut PathState<T>, dw: &[T], ws: &mut Workspace<T>) {
    debug_assert!(state.alive);
    debug_assert_eq!(dw.len(), spec.noise_dim());
    let h = state.grid.h();
    let t = state.time();
    let fk = spec.feynman_kac();
    let x = &mut state.position;

    state.running_payoff = state.running_payoff + state.discount * (fk.running)(x, t) * h;
    state.discount = state.discount * discount_increment(fk, x, t, h);

    spec.drift(x, t, &mut ws.drift);
    spec.diffusion(x, t, &mut ws.diffusion);
    let m = spec.noise_dim();
    for (i, xi) in x.iter_mut().enumerate() {
        let row = &ws.diffusion[i * m..(i + 1) * m];
        let noise = row.iter().zip(dw).fold(T::zero(), |acc, (&b, &w)| acc + b * w);
        *xi = *xi + ws.drift[i] * h + noise;
    }
    state.step += 1;
}

/// Whether `x` at time `t` counts as having left the domain for timestep `h`.
pub fn exit_test<T: Scalar>(
    spec: &ProblemSpec<T>,
    x: &[T],
    t: T,
    h: T,
    mode: BoundaryMode,
    ws: &mut Workspace<T>,
) -> bool {
    let domain = spec.domain();
    if !domain.contains(x) {
        return true;
    }
    match mode {
        BoundaryMode::Standard => false,
        BoundaryMode::GmShift => {
            let distance = domain.boundary_distance(x);
            domain.boundary_normal(x, &mut ws.normal);
            spec.diffusion(x, t, &mut ws.diffusion);
            let m = spec.noise_dim();
            let nb_sq = (0..m)
                .map(|k| {
                    let c = ws
                        .normal
                        .iter()
                        .enumerate()
                        .fold(T::zero(), |acc, (i, &n)| acc + n * ws.diffusion[i * m + k]);
                    c * c
                })
                .sum::<T>();
            distance <= T::lit(GM_C0) * nb_sq.sqrt() * h.sqrt()
        }
    }
}

/// Applies one step and updates `alive`/`exited`.
pub(crate) fn advance<T: Scalar>(
    spec: &ProblemSpec<T>,
    state: &mut PathState<T>,
    dw: &[T],
    mode: BoundaryMode,
    ws: &mut Workspace<T>,
) -> Result<()> {
    em_step(spec, state, dw, ws);
    if state.position.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteState {
            step: state.step,
            time: state.time().to_f64().unwrap_or(f64::NAN),
        });
    }
    let t = state.time();
    if exit_test(spec, &state.position, t, state.grid.h(), mode, ws) {
        state.alive = false;
        state.exited = true;
    } else if state.step == state.grid.steps() {
        state.alive = false;
    }
    Ok(())
}

/// Runs `state` to exit or to the horizon, drawing `noise_dim` normals per step.
pub fn simulate_path<T: Scalar, N: NoiseSource>(
    spec: &ProblemSpec<T>,
    state: PathState<T>,
    mode: BoundaryMode,
    noise: &mut N,
    ws: &mut Workspace<T>,
) -> Result<PathOutcome<T>> {
    let mut state = state;
    let sqrt_h = state.grid.h().sqrt();
    let m = spec.noise_dim() as u64;
    let mut dw = std::mem::take(&mut ws.dw);
    let result = (|| {
        while state.alive {
            noise.fill_scaled(sqrt_h, &mut dw);
            state.rng_cost += m;
            advance(spec, &mut state, &dw, mode, ws)?;
        }
        Ok(())
    })();
    ws.dw = dw;
    result.map(|()| state.finish(spec))
}
