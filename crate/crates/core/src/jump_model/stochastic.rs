use super::{JumpModel, PathView, TimeGrid};
use crate::error::{Error, Result};

/// Per-step description of a semimartingale path `X`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SemimartingaleIncrements {
    /// Continuous increment (drift and Brownian part) over each step.
    pub cont: Vec<f64>,
    /// Increment of `⟨X^c⟩` over each step.
    pub qv: Vec<f64>,
    /// Jump sizes occurring within each step.
    pub jumps: Vec<Vec<f64>>,
}

impl SemimartingaleIncrements {
    pub fn n_steps(&self) -> usize {
        self.cont.len()
    }

    /// `X_{t_i}` for `i = 0..=N` with `X_0 = 0`.
    pub fn levels(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_steps() + 1);
        let mut x = 0.0;
        out.push(x);
        for (c, js) in self.cont.iter().zip(&self.jumps) {
            x += c + js.iter().sum::<f64>();
            out.push(x);
        }
        out
    }

    /// `⟨X^c⟩_{t_i}` for `i = 0..=N`.
    pub fn quadratic_variation(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_steps() + 1);
        let mut q = 0.0;
        out.push(q);
        for dq in &self.qv {
            q += dq;
            out.push(q);
        }
        out
    }
}

/// Doléans-Dade exponential evaluated by the closed product formula and by the
/// step recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct DoleansPath {
    pub closed: Vec<f64>,
    pub recursive: Vec<f64>,
    /// First knot at which a jump of size −1 sent the process to 0.
    pub absorbed_at: Option<usize>,
}

impl DoleansPath {
    /// Largest `|closed − recursive| / max(|closed|, tiny)` along the path.
    pub fn max_relative_discrepancy(&self) -> f64 {
        self.closed
            .iter()
            .zip(&self.recursive)
            .map(|(&a, &b)| {
                if a == b {
                    0.0
                } else {
                    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
                }
            })
            .fold(0.0, f64::max)
    }
}

fn check_shapes(path: &PathView<'_>, z: &[f64], u: &[f64], model: &JumpModel, grid: &TimeGrid) -> Result<()> {
    let n = grid.n_steps();
    if path.n_steps() != n {
        return Err(Error::Contract(format!("path has {} steps, grid has {n}", path.n_steps())));
    }
    let (d, k) = (model.brownian_dim(), model.n_marks());
    if z.len() != n * d {
        return Err(Error::Contract(format!("Z has {} entries, expected {}", z.len(), n * d)));
    }
    if u.len() != n * k {
        return Err(Error::Contract(format!("U has {} entries, expected {}", u.len(), n * k)));
    }
    if path.dw(0).len() != d || path.jumps(0).len() != k {
        return Err(Error::Contract("path dimensions differ from the model".into()));
    }
    Ok(())
}

/// `M_{t_i} = Σ_{j<i} Z_j·ΔW_j + Σ_{j<i} Σ_k U_{j,k}(ΔN_{j,k} − λ_k ξ(t_j,x_k) Δt)`.
///
/// `z` is step-major with `d` entries per step, `u` with `K` entries per step.
pub fn integrate(path: &PathView<'_>, z: &[f64], u: &[f64], model: &JumpModel, grid: &TimeGrid) -> Result<Vec<f64>> {
    check_shapes(path, z, u, model, grid)?;
    let (n, d, k) = (grid.n_steps(), model.brownian_dim(), model.n_marks());
    let dt = grid.dt();
    let mut out = Vec::with_capacity(n + 1);
    let mut m = 0.0;
    out.push(m);
    for i in 0..n {
        let dw = path.dw(i);
        let counts = path.jumps(i);
        let t = grid.t(i);
        for j in 0..d {
            m += z[i * d + j] * dw[j];
        }
        for a in 0..k {
            m += u[i * k + a] * (f64::from(counts[a]) - model.rate(t, a) * dt);
        }
        out.push(m);
    }
    Ok(out)
}

/// Increments of `X = Z·W + U·μ̃` along one path.
pub fn martingale_increments(
    path: &PathView<'_>,
    z: &[f64],
    u: &[f64],
    model: &JumpModel,
    grid: &TimeGrid,
) -> Result<SemimartingaleIncrements> {
    check_shapes(path, z, u, model, grid)?;
    let (n, d, k) = (grid.n_steps(), model.brownian_dim(), model.n_marks());
    let dt = grid.dt();
    let mut out = SemimartingaleIncrements {
        cont: Vec::with_capacity(n),
        qv: Vec::with_capacity(n),
        jumps: Vec::with_capacity(n),
    };
    for i in 0..n {
        let dw = path.dw(i);
        let counts = path.jumps(i);
        let t = grid.t(i);
        let zi = &z[i * d..(i + 1) * d];
        let ui = &u[i * k..(i + 1) * k];
        let mut cont: f64 = zi.iter().zip(dw).map(|(a, b)| a * b).sum();
        let mut js = Vec::new();
        for a in 0..k {
            cont -= ui[a] * model.rate(t, a) * dt;
            for _ in 0..counts[a] {
                js.push(ui[a]);
            }
        }
        out.cont.push(cont);
        out.qv.push(zi.iter().map(|a| a * a).sum::<f64>() * dt);
        out.jumps.push(js);
    }
    Ok(out)
}

/// `E(X)_t = exp(X_t − ½⟨X^c⟩_t) Π_{s≤t} (1 + ΔX_s) e^{−ΔX_s}` at every knot,
/// together with the recursion
/// `E_{i+1} = E_i · exp(ΔX^cont − ½Δ⟨X^c⟩) · Π (1 + ΔX^jump)`.
///
/// A jump of size exactly −1 absorbs both forms at 0 from that knot on.
pub fn doleans_exponential(x: &SemimartingaleIncrements) -> Result<DoleansPath> {
    let n = x.n_steps();
    if x.qv.len() != n || x.jumps.len() != n {
        return Err(Error::Contract("increment arrays have different lengths".into()));
    }
    let mut closed = Vec::with_capacity(n + 1);
    let mut recursive = Vec::with_capacity(n + 1);
    closed.push(1.0);
    recursive.push(1.0);

    let mut level = 0.0;
    let mut qv = 0.0;
    let mut log_correction = 0.0;
    let mut sign = 1.0;
    let mut rec = 1.0;
    let mut absorbed_at = None;
    for i in 0..n {
        level += x.cont[i];
        qv += x.qv[i];
        let mut jump_factor = 1.0;
        for &dx in &x.jumps[i] {
            level += dx;
            let one_plus = 1.0 + dx;
            if one_plus == 0.0 && absorbed_at.is_none() {
                absorbed_at = Some(i + 1);
            }
            log_correction += one_plus.abs().ln() - dx;
            if one_plus < 0.0 {
                sign = -sign;
            }
            jump_factor *= one_plus;
        }
        rec *= (x.cont[i] - 0.5 * x.qv[i]).exp() * jump_factor;
        if absorbed_at.is_some() {
            closed.push(0.0);
            recursive.push(0.0);
        } else {
            closed.push(sign * (level - 0.5 * qv + log_correction).exp());
            recursive.push(rec);
        }
    }
    Ok(DoleansPath { closed, recursive, absorbed_at })
}
