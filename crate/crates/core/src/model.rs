//! Continuous problem definition: SDE coefficients, the stopping domain and
//! the Feynman-Kac data `(f, g, V)` whose functional is estimated.
//!
//! All callables are shared behind `Arc` and must be pure, so a
//! [`ProblemSpec`] can be handed to any number of concurrent samplers.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `(x, t, out)`: writes a `dim`-vector into `out`.
pub type VectorField<T> = Arc<dyn Fn(&[T], T, &mut [T]) + Send + Sync>;
/// `(x, t, out)`: writes a row-major `dim × noise_dim` matrix into `out`.
pub type MatrixField<T> = Arc<dyn Fn(&[T], T, &mut [T]) + Send + Sync>;
/// `(x, t) -> value`.
pub type ScalarField<T> = Arc<dyn Fn(&[T], T) -> T + Send + Sync>;

/// Running payoff `f`, terminal payoff `g` and potential `V`.
#[derive(Clone)]
pub struct FeynmanKacData<T> {
    pub running: ScalarField<T>,
    pub terminal: ScalarField<T>,
    pub potential: ScalarField<T>,
}

impl<T: Scalar> FeynmanKacData<T> {
    pub fn new(running: ScalarField<T>, terminal: ScalarField<T>, potential: ScalarField<T>) -> Self {
        Self {
            running,
            terminal,
            potential,
        }
    }

    /// `f ≡ 0`, `g ≡ c`, `V ≡ 0`: every path pays exactly `c`.
    pub fn constant_terminal(c: T) -> Self {
        Self::new(zero_field(), Arc::new(move |_, _| c), zero_field())
    }
}

impl<T> fmt::Debug for FeynmanKacData<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("FeynmanKacData { .. }")
    }
}

fn zero_field<T: Scalar>() -> ScalarField<T> {
    Arc::new(|_, _| T::zero())
}

/// The two payoff encodings of the expected exit time. They produce the same
/// per-path value when `V ≡ 0`, so they agree in expectation as well.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExitTimeProfile {
    /// `f ≡ 0, g(x, t) = t, V ≡ 0`
    #[default]
    TerminalTime,
    /// `f ≡ 1, g ≡ 0, V ≡ 0`
    UnitRunning,
}

impl ExitTimeProfile {
    pub fn feynman_kac<T: Scalar>(self) -> FeynmanKacData<T> {
        match self {
            Self::TerminalTime => FeynmanKacData::new(zero_field(), Arc::new(|_, t| t), zero_field()),
            Self::UnitRunning => FeynmanKacData::new(Arc::new(|_, _| T::one()), zero_field(), zero_field()),
        }
    }
}

impl FromStr for ExitTimeProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "terminal-time" => Ok(Self::TerminalTime),
            "unit-running" => Ok(Self::UnitRunning),
            other => Err(Error::InvalidConfig(format!("unknown exit-time profile `{other}`"))),
        }
    }
}

pub type PointPredicate<T> = Arc<dyn Fn(&[T]) -> bool + Send + Sync>;
pub type PointFunction<T> = Arc<dyn Fn(&[T]) -> T + Send + Sync>;
/// Writes a unit vector into the output slice.
pub type NormalField<T> = Arc<dyn Fn(&[T], &mut [T]) + Send + Sync>;

/// Analytic domain with closed-form membership, boundary distance and normal.
#[derive(Clone)]
pub struct DomainGeometry<T> {
    contains: PointPredicate<T>,
    boundary_distance: PointFunction<T>,
    boundary_normal: NormalField<T>,
}

impl<T: Scalar> DomainGeometry<T> {
    pub fn new(
        contains: PointPredicate<T>,
        boundary_distance: PointFunction<T>,
        boundary_normal: NormalField<T>,
    ) -> Self {
        Self {
            contains,
            boundary_distance,
            boundary_normal,
        }
    }

    /// Open cube `{x : ‖x‖_∞ < half_width}`.
    ///
    /// The normal at edges and corners follows the dominant coordinate, ties
    /// going to the lowest index.
    pub fn cube(half_width: T) -> Self {
        Self::new(
            Arc::new(move |x| inf_norm(x) < half_width),
            Arc::new(move |x| {
                let m = inf_norm(x);
                if m <= half_width {
                    half_width - m
                } else {
                    x.iter()
                        .map(|&xi| {
                            let e = (xi.abs() - half_width).max(T::zero());
                            e * e
                        })
                        .sum::<T>()
                        .sqrt()
                }
            }),
            Arc::new(|x, out| {
                let mut best = 0;
                for (j, xj) in x.iter().enumerate() {
                    if xj.abs() > x[best].abs() {
                        best = j;
                    }
                }
                out.iter_mut().for_each(|o| *o = T::zero());
                out[best] = if x[best] < T::zero() { -T::one() } else { T::one() };
            }),
        )
    }

    /// Open ball `{x : ‖x‖₂ < radius}` centred at the origin.
    pub fn ball(radius: T) -> Self {
        Self::new(
            Arc::new(move |x| two_norm(x) < radius),
            Arc::new(move |x| (radius - two_norm(x)).abs()),
            Arc::new(|x, out| {
                let r = two_norm(x);
                if r > T::zero() {
                    out.iter_mut().zip(x).for_each(|(o, &xi)| *o = xi / r);
                } else {
                    out.iter_mut().for_each(|o| *o = T::zero());
                    out[0] = T::one();
                }
            }),
        )
    }

    #[inline]
    pub fn contains(&self, x: &[T]) -> bool {
        (self.contains)(x)
    }

    #[inline]
    pub fn boundary_distance(&self, x: &[T]) -> T {
        (self.boundary_distance)(x)
    }

    /// Unit outward normal at the boundary projection of `x`.
    #[inline]
    pub fn boundary_normal(&self, x: &[T], out: &mut [T]) {
        (self.boundary_normal)(x, out)
    }
}

impl<T> fmt::Debug for DomainGeometry<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("DomainGeometry { .. }")
    }
}

fn inf_norm<T: Scalar>(x: &[T]) -> T {
    x.iter().fold(T::zero(), |m, xi| m.max(xi.abs()))
}

fn two_norm<T: Scalar>(x: &[T]) -> T {
    x.iter().map(|&xi| xi * xi).sum::<T>().sqrt()
}

/// A stopped SDE `dX = a(X,t) dt + b(X,t) dW` on a domain, together with the
/// payoff data, horizon and start point.
#[derive(Clone)]
pub struct ProblemSpec<T> {
    dim: usize,
    noise_dim: usize,
    drift: VectorField<T>,
    diffusion: MatrixField<T>,
    fk: FeynmanKacData<T>,
    horizon: T,
    start: Vec<T>,
    domain: DomainGeometry<T>,
}

impl<T: Scalar> ProblemSpec<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        dim: usize,
        noise_dim: usize,
        drift: VectorField<T>,
        diffusion: MatrixField<T>,
        fk: FeynmanKacData<T>,
        horizon: T,
        start: Vec<T>,
        domain: DomainGeometry<T>,
    ) -> Result<Self> {
        if dim == 0 || noise_dim == 0 {
            return Err(Error::InvalidConfig("dimensions must be positive".into()));
        }
        if !(horizon > T::zero()) || !horizon.is_finite() {
            return Err(Error::InvalidConfig(format!("horizon must be positive, got {horizon}")));
        }
        if start.len() != dim {
            return Err(Error::InvalidConfig(format!(
                "start has {} components, expected {dim}",
                start.len()
            )));
        }
        if !domain.contains(&start) {
            return Err(Error::StartOutsideDomain);
        }
        Ok(Self {
            dim,
            noise_dim,
            drift,
            diffusion,
            fk,
            horizon,
            start,
            domain,
        })
    }

    /// Replaces the payoff data, keeping dynamics and domain.
    pub fn with_feynman_kac(mut self, fk: FeynmanKacData<T>) -> Self {
        self.fk = fk;
        self
    }

    /// Replaces drift and diffusion; the noise dimension may change.
    pub fn with_dynamics(mut self, noise_dim: usize, drift: VectorField<T>, diffusion: MatrixField<T>) -> Result<Self> {
        if noise_dim == 0 {
            return Err(Error::InvalidConfig("noise dimension must be positive".into()));
        }
        self.noise_dim = noise_dim;
        self.drift = drift;
        self.diffusion = diffusion;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn horizon(&self) -> T {
        self.horizon
    }

    pub fn start(&self) -> &[T] {
        &self.start
    }

    pub fn domain(&self) -> &DomainGeometry<T> {
        &self.domain
    }

    pub fn feynman_kac(&self) -> &FeynmanKacData<T> {
        &self.fk
    }

    #[inline]
    pub fn drift(&self, x: &[T], t: T, out: &mut [T]) {
        (self.drift)(x, t, out)
    }

    #[inline]
    pub fn diffusion(&self, x: &[T], t: T, out: &mut [T]) {
        (self.diffusion)(x, t, out)
    }
}

impl<T: Scalar> fmt::Debug for ProblemSpec<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("dim", &self.dim)
            .field("noise_dim", &self.noise_dim)
            .field("horizon", &self.horizon)
            .field("start", &self.start)
            .finish_non_exhaustive()
    }
}

/// `a ≡ 0`.
pub fn zero_drift<T: Scalar>() -> VectorField<T> {
    Arc::new(|_, _, out| out.iter_mut().for_each(|o| *o = T::zero()))
}

/// `b ≡ I` for a square `dim × dim` noise.
pub fn identity_diffusion<T: Scalar>(dim: usize) -> MatrixField<T> {
    Arc::new(move |_, _, out| {
        out.iter_mut().for_each(|o| *o = T::zero());
        for i in 0..dim {
            out[i * dim + i] = T::one();
        }
    })
}

/// Standard Brownian motion in the open cube `(-half_width, half_width)^dim`.
pub fn make_cube_problem<T: Scalar>(
    half_width: T,
    dim: usize,
    horizon: T,
    start: Vec<T>,
    profile: ExitTimeProfile,
) -> Result<ProblemSpec<T>> {
    if !(half_width > T::zero()) {
        return Err(Error::InvalidConfig(format!(
            "half width must be positive, got {half_width}"
        )));
    }
    ProblemSpec::new(
        dim,
        dim,
        zero_drift(),
        identity_diffusion(dim),
        profile.feynman_kac(),
        horizon,
        start,
        DomainGeometry::cube(half_width),
    )
}

/// Standard Brownian motion in the open ball of the given radius.
pub fn make_ball_problem<T: Scalar>(
    radius: T,
    dim: usize,
    horizon: T,
    start: Vec<T>,
    profile: ExitTimeProfile,
) -> Result<ProblemSpec<T>> {
    if !(radius > T::zero()) {
        return Err(Error::InvalidConfig(format!("radius must be positive, got {radius}")));
    }
    ProblemSpec::new(
        dim,
        dim,
        zero_drift(),
        identity_diffusion(dim),
        profile.feynman_kac(),
        horizon,
        start,
        DomainGeometry::ball(radius),
    )
}

/// Built-in problems addressable by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Brownian motion in `(-1, 1)^3`, start at the origin, `T = 1`.
    Cube3d,
    /// The slab `(-1, 1)`, start at 0, `T = 1`.
    Cube1d,
    /// Brownian motion in the unit ball of R^3, start at the origin, `T = 1`.
    Ball3d,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Self::Cube3d => "cube3d",
            Self::Cube1d => "cube1d",
            Self::Ball3d => "ball3d",
        }
    }

    pub fn build<T: Scalar>(self, profile: ExitTimeProfile) -> ProblemSpec<T> {
        let built = match self {
            Self::Cube3d => make_cube_problem(T::one(), 3, T::one(), vec![T::zero(); 3], profile),
            Self::Cube1d => make_cube_problem(T::one(), 1, T::one(), vec![T::zero()], profile),
            Self::Ball3d => make_ball_problem(T::one(), 3, T::one(), vec![T::zero(); 3], profile),
        };
        built.expect("preset parameters are valid")
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cube3d" => Ok(Self::Cube3d),
            "cube1d" => Ok(Self::Cube1d),
            "ball3d" => Ok(Self::Ball3d),
            other => Err(Error::InvalidConfig(format!("unknown problem `{other}`"))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One-step discount factor `exp(-V(x, t) h)` (left-endpoint rule).
#[inline]
pub fn discount_increment<T: Scalar>(fk: &FeynmanKacData<T>, x: &[T], t: T, h: T) -> T {
    (-(fk.potential)(x, t) * h).exp()
}
