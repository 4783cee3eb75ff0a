use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use super::{ReportBuilder, VerificationReport};
use crate::error::{Error, Result};
use crate::jump_model::{doleans_exponential, martingale_increments, JumpModel, PathBundle, PathView};
use crate::numeric::mean_and_se;

/// `(step, W_{t_i}, N_{t_i}) ↦ (Z_i, U_i)`, evaluated before the step's
/// increments are revealed.
pub type IntegrandFn = Arc<dyn Fn(usize, &[f64], &[u32]) -> (Vec<f64>, Vec<f64>) + Send + Sync>;

/// Predictable integrands of `Z·W + U·μ̃`, piecewise constant over steps.
#[derive(Clone)]
pub struct MartingaleSpec {
    pub name: String,
    pub integrands: IntegrandFn,
}

impl MartingaleSpec {
    pub fn constant(z: Vec<f64>, u: Vec<f64>) -> Self {
        let name = format!("constant(z={z:?}, u={u:?})");
        Self { name, integrands: Arc::new(move |_, _, _| (z.clone(), u.clone())) }
    }

    pub fn adapted(
        name: &str,
        f: impl Fn(usize, &[f64], &[u32]) -> (Vec<f64>, Vec<f64>) + Send + Sync + 'static,
    ) -> Self {
        Self { name: name.to_string(), integrands: Arc::new(f) }
    }

    /// Step-major `(Z, U)` arrays along one path.
    pub fn along(&self, path: &PathView<'_>, model: &JumpModel) -> Result<(Vec<f64>, Vec<f64>)> {
        let (d, k, n) = (model.brownian_dim(), model.n_marks(), path.n_steps());
        let mut w = vec![0.0; d];
        let mut counts = vec![0u32; k];
        let mut z = Vec::with_capacity(n * d);
        let mut u = Vec::with_capacity(n * k);
        for i in 0..n {
            let (zi, ui) = (self.integrands)(i, &w, &counts);
            if zi.len() != d || ui.len() != k {
                return Err(Error::Contract(format!(
                    "integrand {} returned ({}, {}) entries, expected ({d}, {k})",
                    self.name,
                    zi.len(),
                    ui.len()
                )));
            }
            z.extend(zi);
            u.extend(ui);
            for (a, b) in w.iter_mut().zip(path.dw(i)) {
                *a += b;
            }
            for (a, b) in counts.iter_mut().zip(path.jumps(i)) {
                *a += b;
            }
        }
        Ok((z, u))
    }
}

impl fmt::Debug for MartingaleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MartingaleSpec({})", self.name)
    }
}

fn check_model(paths: &PathBundle, model: &JumpModel) -> Result<()> {
    if paths.dim() != model.brownian_dim() || paths.n_marks() != model.n_marks() {
        return Err(Error::Contract("paths were simulated under a different model shape".into()));
    }
    Ok(())
}

/// Path-wise relative discrepancy between the closed and recursive forms of
/// `E(Z·W + U·μ̃)`.
pub fn check_doleans(paths: &PathBundle, model: &JumpModel, spec: &MartingaleSpec, tolerance: f64) -> Result<VerificationReport> {
    check_model(paths, model)?;
    let grid = *paths.grid();
    let per_path: Vec<Result<(f64, f64, bool)>> = (0..paths.n_paths())
        .into_par_iter()
        .map(|p| {
            let view = paths.path(p);
            let (z, u) = spec.along(&view, model)?;
            let x = martingale_increments(&view, &z, &u, model, &grid)?;
            let e = doleans_exponential(&x)?;
            Ok((e.max_relative_discrepancy(), *e.closed.last().unwrap(), e.absorbed_at.is_some()))
        })
        .collect();
    let mut report = ReportBuilder::new("doleans", tolerance);
    let mut terminal = Vec::with_capacity(per_path.len());
    let mut absorbed = 0usize;
    for (p, r) in per_path.into_iter().enumerate() {
        let (disc, last, hit) = r?;
        report.observe(disc, || format!("path {p}: relative discrepancy {disc:e}"));
        terminal.push(last);
        absorbed += usize::from(hit);
    }
    let (m, se) = mean_and_se(&terminal);
    report.metric("terminal_mean", m);
    report.metric("terminal_standard_error", se);
    report.metric("absorbed_paths", absorbed as f64);
    Ok(report.finish())
}

/// Compares `E[L_T ln L_T]` with `E[L_T(½⟨M^c⟩_T + Σ (U e^U − e^U + 1) ν_T)]`
/// for `L = E(Z·W + (e^U − 1)·μ̃)`; passes when the two sample means differ by
/// at most three combined standard errors.
pub fn check_llogl(paths: &PathBundle, model: &JumpModel, spec: &MartingaleSpec) -> Result<VerificationReport> {
    check_model(paths, model)?;
    let grid = *paths.grid();
    let (dt, k) = (grid.dt(), model.n_marks());
    let per_path: Vec<Result<(f64, f64)>> = (0..paths.n_paths())
        .into_par_iter()
        .map(|p| {
            let view = paths.path(p);
            let (z, u) = spec.along(&view, model)?;
            let jump_sizes: Vec<f64> = u.iter().map(|x| x.exp_m1()).collect();
            let x = martingale_increments(&view, &z, &jump_sizes, model, &grid)?;
            let l_t = *doleans_exponential(&x)?.closed.last().unwrap();
            let mut penalty = 0.5 * x.qv.iter().sum::<f64>();
            for i in 0..grid.n_steps() {
                let t = grid.t(i);
                for a in 0..k {
                    let v = u[i * k + a];
                    penalty += (v * v.exp() - v.exp_m1()) * model.rate(t, a) * dt;
                }
            }
            let entropy = if l_t > 0.0 { l_t * l_t.ln() } else { 0.0 };
            Ok((entropy, l_t * penalty))
        })
        .collect();
    let (mut a, mut b) = (Vec::with_capacity(per_path.len()), Vec::with_capacity(per_path.len()));
    for r in per_path {
        let (x, y) = r?;
        a.push(x);
        b.push(y);
    }
    let (ma, sa) = mean_and_se(&a);
    let (mb, sb) = mean_and_se(&b);
    let tolerance = 3.0 * (sa * sa + sb * sb).sqrt();
    let mut report = ReportBuilder::new("llogl", tolerance);
    report.observe_many((ma - mb).abs(), a.len(), || format!("{}: {ma} vs {mb}", spec.name));
    report.metric("entropy_estimate", ma);
    report.metric("entropy_standard_error", sa);
    report.metric("penalty_estimate", mb);
    report.metric("penalty_standard_error", sb);
    Ok(report.finish())
}
