//! Backward solvers for `−dY = f(t, Y, Z, U) dt − Z dW − U·μ̃` with `Y_T = η_T`.
//!
//! [`solve_lattice`] runs exact conditional expectations on a [`Lattice`] with
//! an implicit-in-`y` step; [`solve_mc`] runs the explicit regression scheme on
//! a [`PathBundle`](crate::jump_model::PathBundle). [`solve_ladder`] solves the
//! approximation ladder and its envelopes, and [`compare`] checks node-wise
//! ordering of two solutions.
//!
//! [`Lattice`]: crate::jump_model::Lattice

mod compare;
mod ladder;
mod lattice;
mod mc;

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::jump_model::TimeGrid;

pub use compare::{check_generator_ordering, compare};
pub use ladder::{solve_ladder, LadderConfig, LadderEntry, LadderFamily};
pub use lattice::{solve_lattice, LatticeSolverConfig};
pub use mc::{solve_mc, McSolverConfig};

pub type TerminalFn = Arc<dyn Fn(&[f64], &[u32]) -> f64 + Send + Sync>;

/// A functional of the terminal state `(W_T, N_T)`.
#[derive(Clone)]
pub enum Terminal {
    /// `constant + Σ_j brownian_j W^j_T + Σ_k counts_k N^k_T`; missing
    /// coefficients are zero.
    Affine { constant: f64, brownian: Vec<f64>, counts: Vec<f64> },
    Abs(Box<Terminal>),
    Scaled(f64, Box<Terminal>),
    Custom { name: String, f: TerminalFn },
}

impl Terminal {
    pub fn constant(c: f64) -> Self {
        Terminal::Affine { constant: c, brownian: Vec::new(), counts: Vec::new() }
    }

    /// `W_T` in the first Brownian coordinate.
    pub fn brownian() -> Self {
        Terminal::Affine { constant: 0.0, brownian: vec![1.0], counts: Vec::new() }
    }

    pub fn counts(coefficients: Vec<f64>) -> Self {
        Terminal::Affine { constant: 0.0, brownian: Vec::new(), counts: coefficients }
    }

    pub fn custom(name: &str, f: impl Fn(&[f64], &[u32]) -> f64 + Send + Sync + 'static) -> Self {
        Terminal::Custom { name: name.to_string(), f: Arc::new(f) }
    }

    pub fn abs(self) -> Self {
        Terminal::Abs(Box::new(self))
    }

    pub fn scaled(self, factor: f64) -> Self {
        Terminal::Scaled(factor, Box::new(self))
    }

    pub fn eval(&self, w: &[f64], counts: &[u32]) -> f64 {
        match self {
            Terminal::Affine { constant, brownian, counts: coef } => {
                let bw: f64 = brownian.iter().zip(w).map(|(a, x)| a * x).sum();
                let bn: f64 = coef.iter().zip(counts).map(|(a, &n)| a * f64::from(n)).sum();
                constant + bw + bn
            }
            Terminal::Abs(inner) => inner.eval(w, counts).abs(),
            Terminal::Scaled(a, inner) => a * inner.eval(w, counts),
            Terminal::Custom { f, .. } => f(w, counts),
        }
    }

    /// Rejects coefficients for coordinates the model does not have.
    pub fn validate(&self, dim: usize, n_marks: usize) -> Result<()> {
        match self {
            Terminal::Affine { constant, brownian, counts } => {
                if brownian.len() > dim || counts.len() > n_marks {
                    return Err(Error::Config(format!(
                        "terminal has {} Brownian and {} count coefficients for a model with d = {dim}, K = {n_marks}",
                        brownian.len(),
                        counts.len()
                    )));
                }
                if !constant.is_finite() || brownian.iter().chain(counts).any(|x| !x.is_finite()) {
                    return Err(Error::Config("terminal coefficients must be finite".into()));
                }
                Ok(())
            }
            Terminal::Abs(inner) => inner.validate(dim, n_marks),
            Terminal::Scaled(a, inner) => {
                if !a.is_finite() {
                    return Err(Error::Config("terminal scale must be finite".into()));
                }
                inner.validate(dim, n_marks)
            }
            Terminal::Custom { .. } => Ok(()),
        }
    }
}

impl fmt::Debug for Terminal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Terminal::Affine { constant, brownian, counts } => f
                .debug_struct("Affine")
                .field("constant", constant)
                .field("brownian", brownian)
                .field("counts", counts)
                .finish(),
            Terminal::Abs(inner) => write!(f, "Abs({inner:?})"),
            Terminal::Scaled(a, inner) => write!(f, "Scaled({a}, {inner:?})"),
            Terminal::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Lattice,
    MonteCarlo,
}

/// Which layers a solver keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Storage {
    #[default]
    Full,
    /// Only the root values and the moments; memory stays at two layers.
    RootOnly,
}

/// Per-time arrays of a solution.
///
/// Layer `i` of `y` has one value per node (lattice) or path (Monte Carlo).
/// `z[i]` and `u[i]` are row-major with `dim` and `n_marks` entries per node.
/// `v_incr[i]` holds `f(t_i, Y_i, Z_i, U_i) Δt`. On the lattice `m_incr[i]`
/// holds `Y_{i+1}(child) − E_i[Y_{i+1}]` per node and branch; on paths it holds
/// one value per path.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionLayers {
    pub y: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub v_incr: Vec<Vec<f64>>,
    pub m_incr: Vec<Vec<f64>>,
}

/// Expected path functionals, computed by backward recursion on the lattice
/// and by path averages on Monte-Carlo bundles.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SolutionMoments {
    /// `E[Σ |Z|² Δt]`
    pub z_energy: f64,
    /// `E[Σ_i Σ_k U_k² ξλ_k Δt]`
    pub u_energy: f64,
    /// `E[Σ |f| Δt]`, the expected total variation of `V`.
    pub v_variation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SolveDiagnostics {
    pub max_picard_iterations: usize,
    pub max_picard_residual: f64,
    pub sup_abs_generator: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BsdeSolution {
    pub backend: Backend,
    pub grid: TimeGrid,
    pub dim: usize,
    pub n_marks: usize,
    pub generator: String,
    pub y0: f64,
    pub z0: Vec<f64>,
    pub u0: Vec<f64>,
    /// Standard error of `y0` on Monte-Carlo bundles.
    pub y0_standard_error: Option<f64>,
    pub picard_tolerance: f64,
    pub moments: SolutionMoments,
    pub diagnostics: SolveDiagnostics,
    layers: Option<SolutionLayers>,
}

impl BsdeSolution {
    pub fn layers(&self) -> Result<&SolutionLayers> {
        self.layers
            .as_ref()
            .ok_or_else(|| Error::Contract("solution was stored root-only; solve with full storage".into()))
    }

    pub fn is_full(&self) -> bool {
        self.layers.is_some()
    }

    pub fn y(&self, i: usize) -> Result<&[f64]> {
        Ok(&self.layers()?.y[i])
    }

    pub fn n_steps(&self) -> usize {
        self.grid.n_steps()
    }
}
