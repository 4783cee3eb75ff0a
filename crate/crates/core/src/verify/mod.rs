//! Property checks producing [`VerificationReport`]s.
//!
//! Lattice checks take per-layer node values (`x[i][node]`); path checks take
//! a [`PathBundle`](crate::jump_model::PathBundle) and a [`MartingaleSpec`].
//! Stopping times are deterministic grid times throughout.

mod dual;
mod entropy;
mod inequalities;
mod martingale;
mod report;
mod stability;
mod submartingale;

pub use crate::generators::SampleSpec;
pub use dual::{check_dual_representation, ControlGrid, DualConfig};
pub use entropy::check_entropy_inequality;
pub use inequalities::{check_agamma_increment, check_jump_inequality};
pub use martingale::{check_doleans, check_llogl, IntegrandFn, MartingaleSpec};
pub use report::{ReportBuilder, VerificationReport};
pub use stability::{stability_diagnostics, uniform_bound_constant, StabilityConfig};
pub use submartingale::{check_exp_martingale, check_exp_submartingale, ExpClass};

use crate::error::{Error, Result};
use crate::jump_model::Lattice;

pub(crate) fn check_layers(x: &[Vec<f64>], lattice: &Lattice) -> Result<()> {
    if x.len() != lattice.n_steps() + 1 {
        return Err(Error::Contract(format!(
            "{} layers supplied for a lattice with {} steps",
            x.len(),
            lattice.n_steps()
        )));
    }
    for (i, layer) in x.iter().enumerate() {
        if layer.len() != lattice.n_nodes(i) {
            return Err(Error::Contract(format!(
                "layer {i} has {} values, the lattice has {} nodes",
                layer.len(),
                lattice.n_nodes(i)
            )));
        }
    }
    Ok(())
}
