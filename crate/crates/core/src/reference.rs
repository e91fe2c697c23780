//! Analytic reference solutions for the expected exit time of Brownian
//! motion from the cube `(-1, 1)^3` and the slab `(-1, 1)`, with `T = 1`.
//!
//! Both solve `u_t + ½∇²u + 1 = 0` with zero boundary and terminal data. In
//! the cosine basis `φ_n(x) = cos(nπx/2)`, odd `n`, the constant 1 has
//! coefficients `b_n = 4(-1)^{(n-1)/2} / (nπ)` per axis and each mode decays
//! at rate `λ = π²|n|²/8`, giving amplitudes
//! `A(t) = (b_i b_j b_k / λ)(1 - exp(-λ(1-t)))`.
//!
//! Summed directly, the triple series converges only algebraically: the
//! steady part `Σ (b/λ) φ` carries the slow tail. [`cube_exit_solution`]
//! evaluates that steady part through one-dimensional closed forms plus
//! exponentially convergent hyperbolic corrections, and keeps the cosine
//! series only for the transient `Σ (b/λ) e^{-λ(1-t)} φ`, which converges
//! exponentially for `t < 1`. [`cube_exit_series`] is the direct sum.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Largest odd index kept in each coordinate direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeriesTruncation {
    max_index: u32,
}

impl SeriesTruncation {
    pub fn new(max_index: u32) -> Result<Self> {
        if max_index == 0 || max_index.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "truncation index must be odd and positive, got {max_index}"
            )));
        }
        Ok(Self { max_index })
    }

    pub fn max_index(&self) -> u32 {
        self.max_index
    }

    fn modes(&self) -> impl Iterator<Item = u32> + Clone {
        (1..=self.max_index).step_by(2)
    }
}

impl Default for SeriesTruncation {
    fn default() -> Self {
        Self { max_index: 39 }
    }
}

/// One odd cosine mode: its coefficient in the expansion of 1 and its
/// wavenumber squared over π² (so `λ = π² n² / 8`).
#[derive(Clone, Copy)]
struct Mode<T> {
    n: T,
    coeff: T,
}

fn mode<T: Scalar>(n: u32) -> Mode<T> {
    let sign = if (n / 2).is_multiple_of(2) { T::one() } else { -T::one() };
    let nf = T::from_count(u64::from(n));
    Mode {
        n: nf,
        coeff: sign * T::lit(4.0) / (nf * T::PI()),
    }
}

fn cos_mode<T: Scalar>(n: T, x: T) -> T {
    (n * T::PI() * x / T::lit(2.0)).cos()
}

/// `π²/8 · s`, the decay rate for `s = Σ n²`.
fn rate<T: Scalar>(sum_sq: T) -> T {
    T::PI() * T::PI() / T::lit(8.0) * sum_sq
}

/// `cosh(r x) / cosh(r)` without overflow.
fn cosh_ratio<T: Scalar>(r: T, x: T) -> T {
    let ax = x.abs();
    let two = T::lit(2.0);
    (r * (ax - T::one())).exp() * (T::one() + (-two * r * ax).exp()) / (T::one() + (-two * r).exp())
}

fn check_range<T: Scalar>(x: &[T], t: T) -> Result<()> {
    if let Some(bad) = x.iter().find(|v| !(v.abs() <= T::one())) {
        return Err(Error::OutOfRange(format!("coordinate {bad} outside [-1, 1]")));
    }
    if !(t >= T::zero() && t <= T::one()) {
        return Err(Error::OutOfRange(format!("time {t} outside [0, 1]")));
    }
    Ok(())
}

fn check_cube_point<T: Scalar>(x: &[T], t: T) -> Result<()> {
    if x.len() != 3 {
        return Err(Error::OutOfRange(format!(
            "expected a 3-vector, got {} components",
            x.len()
        )));
    }
    check_range(x, t)
}

/// Truncated transient `Σ (b_i b_j b_k / λ) e^{-λ(1-t)} φ_i φ_j φ_k`, or with
/// `steady = true` the direct series `Σ (b/λ)(1 - e^{-λ(1-t)}) φ`.
fn cube_modal_sum<T: Scalar>(x: &[T], t: T, trunc: SeriesTruncation, steady: bool) -> T {
    let modes: Vec<Mode<T>> = trunc.modes().map(mode).collect();
    let table = |xd: T| -> Vec<T> { modes.iter().map(|m| m.coeff * cos_mode(m.n, xd)).collect() };
    let (c1, c2, c3) = (table(x[0]), table(x[1]), table(x[2]));
    let tau = T::one() - t;
    let mut total = T::zero();
    for (mi, ci) in modes.iter().zip(&c1) {
        for (mj, cj) in modes.iter().zip(&c2) {
            let mut row = T::zero();
            for (mk, ck) in modes.iter().zip(&c3) {
                let lambda = rate(mi.n * mi.n + mj.n * mj.n + mk.n * mk.n);
                let decay = (-lambda * tau).exp();
                let amp = if steady { T::one() - decay } else { decay };
                row = row + amp / lambda * *ck;
            }
            total = total + *ci * *cj * row;
        }
    }
    total
}

/// Steady state `w` of `½∇²w + 1 = 0` on the cube:
/// `w = (1 - x₃²) - Σ_k (b_k/κ_k) φ_k(x₃) C_k(x₂) - Σ_{j,k} (b_j b_k/κ_jk) φ_j(x₂) φ_k(x₃) C_jk(x₁)`
/// with `C(x) = cosh(√(2κ) x)/cosh(√(2κ))`.
fn cube_steady<T: Scalar>(x: &[T], trunc: SeriesTruncation) -> T {
    let modes: Vec<Mode<T>> = trunc.modes().map(mode).collect();
    let two = T::lit(2.0);
    let mut w = T::one() - x[2] * x[2];
    for mk in &modes {
        let kappa = rate(mk.n * mk.n);
        w = w - mk.coeff / kappa * cos_mode(mk.n, x[2]) * cosh_ratio((two * kappa).sqrt(), x[1]);
    }
    for mj in &modes {
        let cj = mj.coeff * cos_mode(mj.n, x[1]);
        for mk in &modes {
            let kappa = rate(mj.n * mj.n + mk.n * mk.n);
            w = w - cj * mk.coeff * cos_mode(mk.n, x[2]) / kappa * cosh_ratio((two * kappa).sqrt(), x[0]);
        }
    }
    w
}

/// Expected exit time `u(x, t) = E[min(τ, 1) - t]` from the cube, evaluated
/// through the steady/transient split. On the boundary and at `t = 1` the
/// zero data is returned as is; the truncated hyperbolic corrections would
/// leave a residue of order `1e-5` on the faces.
pub fn cube_exit_solution<T: Scalar>(x: &[T], t: T, trunc: SeriesTruncation) -> Result<T> {
    check_cube_point(x, t)?;
    if t == T::one() || x.iter().any(|v| v.abs() == T::one()) {
        return Ok(T::zero());
    }
    // the solution is symmetric under axis permutations, and the hyperbolic
    // corrections converge fastest on the axes closest to the centre
    let mut sorted = [x[0], x[1], x[2]];
    sorted.sort_by(|a, b| a.abs().partial_cmp(&b.abs()).expect("finite point"));
    Ok(cube_steady(&sorted, trunc) - cube_modal_sum(x, t, trunc, false))
}

/// The same function as [`cube_exit_solution`], summed directly as the
/// truncated triple cosine series.
pub fn cube_exit_series<T: Scalar>(x: &[T], t: T, trunc: SeriesTruncation) -> Result<T> {
    check_cube_point(x, t)?;
    Ok(cube_modal_sum(x, t, trunc, true))
}

/// Expected exit time from the slab `(-1, 1)`:
/// `(1 - x²) - Σ_i (b_i/λ_i) e^{-λ_i(1-t)} cos(iπx/2)`.
pub fn slab_exit_solution<T: Scalar>(x: T, t: T, trunc: SeriesTruncation) -> Result<T> {
    check_range(&[x], t)?;
    if t == T::one() {
        return Ok(T::zero());
    }
    let transient = trunc
        .modes()
        .map(mode::<T>)
        .map(|m| {
            let lambda = rate(m.n * m.n);
            m.coeff / lambda * (-lambda * (T::one() - t)).exp() * cos_mode(m.n, x)
        })
        .sum::<T>();
    Ok(T::one() - x * x - transient)
}

/// Direct truncated cosine series for the slab.
pub fn slab_exit_series<T: Scalar>(x: T, t: T, trunc: SeriesTruncation) -> Result<T> {
    check_range(&[x], t)?;
    Ok(trunc
        .modes()
        .map(mode::<T>)
        .map(|m| {
            let lambda = rate(m.n * m.n);
            m.coeff / lambda * (T::one() - (-lambda * (T::one() - t)).exp()) * cos_mode(m.n, x)
        })
        .sum())
}

/// Space-time grid produced by [`fd_oracle_1d`].
#[derive(Debug, Clone, PartialEq)]
pub struct FdSolution<T> {
    /// `mesh + 1` nodes on `[-1, 1]`.
    pub x: Vec<T>,
    /// `rows[n]` holds the solution at `t = 1 - n/steps`; `rows[0]` is the
    /// terminal data and the last row is `t = 0`.
    pub rows: Vec<Vec<T>>,
}

impl<T: Scalar> FdSolution<T> {
    pub fn at_t0(&self) -> &[T] {
        self.rows.last().expect("at least one row")
    }

    /// Value at `t = 0` at the grid node nearest `x`.
    pub fn value_t0(&self, x: T) -> T {
        let mesh = self.x.len() - 1;
        let j = ((x + T::one()) / T::lit(2.0) * T::from_count(mesh as u64))
            .round()
            .to_usize()
            .unwrap_or(0)
            .min(mesh);
        self.at_t0()[j]
    }
}

/// Crank-Nicolson solution of `u_t + ½u_xx + 1 = 0` on `(-1, 1) × (0, 1)`
/// with zero boundary and terminal data, marched backward from `t = 1` with
/// `mesh` intervals in space and `steps` in time.
pub fn fd_oracle_1d<T: Scalar>(mesh: usize, steps: usize) -> Result<FdSolution<T>> {
    if mesh < 8 || steps < 8 {
        return Err(Error::InvalidConfig(format!(
            "mesh and steps must be at least 8, got {mesh} and {steps}"
        )));
    }
    let dx = T::lit(2.0) / T::from_count(mesh as u64);
    let dt = T::one() / T::from_count(steps as u64);
    let x: Vec<T> = (0..=mesh).map(|j| -T::one() + dx * T::from_count(j as u64)).collect();
    // σ = dt/(4 dx²): half of the ½ diffusion coefficient on each time level
    let sigma = dt / (T::lit(4.0) * dx * dx);
    let two = T::lit(2.0);
    let n = mesh - 1;
    let (sub, diag) = (-sigma, T::one() + two * sigma);

    let mut rows = Vec::with_capacity(steps + 1);
    let mut u = vec![T::zero(); mesh + 1];
    rows.push(u.clone());
    let mut rhs = vec![T::zero(); n];
    let mut c_prime = vec![T::zero(); n];
    for _ in 0..steps {
        for j in 1..=n {
            rhs[j - 1] = sigma * u[j - 1] + (T::one() - two * sigma) * u[j] + sigma * u[j + 1] + dt;
        }
        // Thomas algorithm on the constant tridiagonal (sub, diag, sub)
        c_prime[0] = sub / diag;
        rhs[0] = rhs[0] / diag;
        for i in 1..n {
            let denom = diag - sub * c_prime[i - 1];
            c_prime[i] = sub / denom;
            rhs[i] = (rhs[i] - sub * rhs[i - 1]) / denom;
        }
        for i in (0..n - 1).rev() {
            rhs[i] = rhs[i] - c_prime[i] * rhs[i + 1];
        }
        u[1..=n].copy_from_slice(&rhs);
        rows.push(u.clone());
    }
    Ok(FdSolution { x, rows })
}
