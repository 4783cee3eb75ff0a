//! Discrete-time jump-diffusion model: a `d`-dimensional Brownian motion and a
//! random measure with finitely many marks and compensator `ξ(t,x_k) λ_k dt`.

mod lattice;
mod paths;
mod stochastic;

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

pub use lattice::{Branch, Branching, Lattice, LatticePaths, NodeState};
pub use paths::{simulate_paths, PathBundle, PathView};
pub use stochastic::{
    doleans_exponential, integrate, martingale_increments, DoleansPath, SemimartingaleIncrements,
};

/// Finitely many jump marks with their intensity weights.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkSpace {
    marks: Vec<f64>,
    weights: Vec<f64>,
}

impl MarkSpace {
    pub fn new(marks: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if marks.len() != weights.len() {
            return Err(Error::Config(format!(
                "{} marks but {} weights",
                marks.len(),
                weights.len()
            )));
        }
        for (k, &w) in weights.iter().enumerate() {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::Config(format!("weight of mark {k} must be finite and >= 0, got {w}")));
            }
        }
        for (a, &x) in marks.iter().enumerate() {
            if !x.is_finite() {
                return Err(Error::Config(format!("mark {a} is not finite")));
            }
            if marks[..a].contains(&x) {
                return Err(Error::Config(format!("mark {x} appears twice")));
            }
        }
        Ok(Self { marks, weights })
    }

    pub fn empty() -> Self {
        Self { marks: Vec::new(), weights: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.marks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.marks.is_empty()
    }

    pub fn marks(&self) -> &[f64] {
        &self.marks
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

pub type IntensityFn = Arc<dyn Fn(f64, usize) -> f64 + Send + Sync>;

/// Intensity density `ξ(t, x_k)`.
#[derive(Clone)]
pub enum Intensity {
    Constant(f64),
    PerMark(Vec<f64>),
    /// `values[j][k]` applies on `[times[j], times[j + 1])`; the first row also
    /// covers times before `times[0]` and the last row extends to infinity.
    Piecewise { times: Vec<f64>, values: Vec<Vec<f64>> },
    Custom(IntensityFn),
}

impl fmt::Debug for Intensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Intensity::Constant(v) => f.debug_tuple("Constant").field(v).finish(),
            Intensity::PerMark(v) => f.debug_tuple("PerMark").field(v).finish(),
            Intensity::Piecewise { times, values } => f
                .debug_struct("Piecewise")
                .field("times", times)
                .field("values", values)
                .finish(),
            Intensity::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl Intensity {
    fn eval(&self, t: f64, k: usize) -> f64 {
        match self {
            Intensity::Constant(v) => *v,
            Intensity::PerMark(v) => v[k],
            Intensity::Piecewise { times, values } => {
                let j = times.partition_point(|&s| s <= t).saturating_sub(1);
                values[j][k]
            }
            Intensity::Custom(f) => f(t, k),
        }
    }

    fn check_shape(&self, n_marks: usize) -> Result<()> {
        match self {
            Intensity::Constant(_) | Intensity::Custom(_) => Ok(()),
            Intensity::PerMark(v) if v.len() != n_marks => Err(Error::Config(format!(
                "per-mark intensity has {} entries for {n_marks} marks",
                v.len()
            ))),
            Intensity::PerMark(_) => Ok(()),
            Intensity::Piecewise { times, values } => {
                if times.is_empty() || times.len() != values.len() {
                    return Err(Error::Config("piecewise intensity needs one row per knot".into()));
                }
                if times.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::Config("piecewise intensity knots must increase strictly".into()));
                }
                if values.iter().any(|row| row.len() != n_marks) {
                    return Err(Error::Config(format!(
                        "every piecewise intensity row needs {n_marks} entries"
                    )));
                }
                Ok(())
            }
        }
    }
}

/// The probability model: marks, intensity density and Brownian dimension.
#[derive(Debug, Clone)]
pub struct JumpModel {
    marks: MarkSpace,
    xi: Intensity,
    xi_bound: f64,
    brownian_dim: usize,
}

impl JumpModel {
    pub fn new(marks: MarkSpace, xi: Intensity, xi_bound: f64, brownian_dim: usize) -> Result<Self> {
        if brownian_dim == 0 {
            return Err(Error::Config("Brownian dimension must be positive".into()));
        }
        if !(xi_bound.is_finite() && xi_bound >= 0.0) {
            return Err(Error::Config(format!("intensity bound must be finite and >= 0, got {xi_bound}")));
        }
        xi.check_shape(marks.len())?;
        Ok(Self { marks, xi, xi_bound, brownian_dim })
    }

    /// Brownian motion only.
    pub fn brownian(dim: usize) -> Result<Self> {
        Self::new(MarkSpace::empty(), Intensity::Constant(0.0), 0.0, dim)
    }

    /// One-dimensional Brownian motion plus marks with constant `ξ`.
    pub fn with_constant_intensity(marks: MarkSpace, xi: f64) -> Result<Self> {
        Self::new(marks, Intensity::Constant(xi), xi, 1)
    }

    pub fn mark_space(&self) -> &MarkSpace {
        &self.marks
    }

    pub fn n_marks(&self) -> usize {
        self.marks.len()
    }

    pub fn brownian_dim(&self) -> usize {
        self.brownian_dim
    }

    pub fn xi_bound(&self) -> f64 {
        self.xi_bound
    }

    pub fn xi(&self, t: f64, k: usize) -> f64 {
        self.xi.eval(t, k)
    }

    /// Compensator density `ξ(t, x_k) λ_k` of mark `k`.
    pub fn rate(&self, t: f64, k: usize) -> f64 {
        self.xi.eval(t, k) * self.marks.weights[k]
    }

    pub fn rates(&self, t: f64) -> Vec<f64> {
        (0..self.n_marks()).map(|k| self.rate(t, k)).collect()
    }

    /// Expected jump count of mark `k` over step `i` (left-endpoint `ξ`).
    pub fn step_mean(&self, grid: &TimeGrid, i: usize, k: usize) -> f64 {
        self.rate(grid.t(i), k) * grid.dt()
    }

    /// Checks `0 <= ξ <= C_ν` at every knot of `grid` and every mark.
    pub fn validate_on(&self, grid: &TimeGrid) -> Result<()> {
        for i in 0..=grid.n_steps() {
            let t = grid.t(i);
            for k in 0..self.n_marks() {
                let v = self.xi(t, k);
                if !(v.is_finite() && v >= 0.0 && v <= self.xi_bound) {
                    return Err(Error::Config(format!(
                        "intensity density {v} at t={t}, mark {k} is outside [0, {}]",
                        self.xi_bound
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Uniform grid `t_i = i T / N` on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::Config(format!("horizon must be positive, got {horizon}")));
        }
        if n_steps == 0 {
            return Err(Error::Config("number of steps must be positive".into()));
        }
        Ok(Self { horizon, n_steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    pub fn t(&self, i: usize) -> f64 {
        if i == self.n_steps {
            self.horizon
        } else {
            self.horizon * i as f64 / self.n_steps as f64
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|i| self.t(i)).collect()
    }
}
