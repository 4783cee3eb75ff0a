use crate::error::{Error, Result};
use crate::generators::StructureParams;
use crate::jump_model::TimeGrid;

fn prepare(x: &[f64], params: &StructureParams, grid: &TimeGrid) -> Result<(Vec<f64>, Vec<f64>)> {
    if x.len() != grid.n_steps() + 1 {
        return Err(Error::Contract(format!(
            "path has {} values, grid has {} knots",
            x.len(),
            grid.n_steps() + 1
        )));
    }
    Ok(params.cumulative(grid))
}

/// `Y^{Λ,C}(X)_t = X_t + Λ_t + Σ_{s<t} |X_s| ΔC_s`.
pub fn transform_y(x: &[f64], params: &StructureParams, grid: &TimeGrid) -> Result<Vec<f64>> {
    let (lam, cum) = prepare(x, params, grid)?;
    let mut acc = 0.0;
    Ok((0..x.len())
        .map(|i| {
            let v = x[i] + lam[i] + acc;
            if i + 1 < x.len() {
                acc += x[i].abs() * (cum[i + 1] - cum[i]);
            }
            v
        })
        .collect())
}

/// `Ȳ^{Λ,C}(|X|)_t = e^{C_t}|X_t| + Σ_{s<t} e^{C_s} ΔΛ_s`.
pub fn transform_ybar(abs_x: &[f64], params: &StructureParams, grid: &TimeGrid) -> Result<Vec<f64>> {
    let (lam, cum) = prepare(abs_x, params, grid)?;
    let mut acc = 0.0;
    Ok((0..abs_x.len())
        .map(|i| {
            let v = cum[i].exp() * abs_x[i].abs() + acc;
            if i + 1 < abs_x.len() {
                acc += cum[i].exp() * (lam[i + 1] - lam[i]);
            }
            v
        })
        .collect())
}

/// `U^{Λ,C}(e^X)_t = e^{X_t} + Σ_{s<t} e^{X_s} ΔΛ_s + Σ_{s<t} e^{X_s}|X_s| ΔC_s`.
pub fn transform_u(x: &[f64], params: &StructureParams, grid: &TimeGrid) -> Result<Vec<f64>> {
    let (lam, cum) = prepare(x, params, grid)?;
    let mut acc = 0.0;
    Ok((0..x.len())
        .map(|i| {
            let e = x[i].exp();
            let v = e + acc;
            if i + 1 < x.len() {
                acc += e * (lam[i + 1] - lam[i]) + e * x[i].abs() * (cum[i + 1] - cum[i]);
            }
            v
        })
        .collect())
}
