use rayon::prelude::*;

use super::{Backend, BsdeSolution, SolutionLayers, SolutionMoments, SolveDiagnostics, Storage, Terminal};
use crate::entropic::{BasisSpec, Projection};
use crate::error::{Error, Result};
use crate::generators::Generator;
use crate::jump_model::PathBundle;
use crate::numeric::{mean, mean_and_se, quantile};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McSolverConfig {
    pub basis: BasisSpec,
    pub storage: Storage,
    /// Terminal values are clamped to the `[1 − q, q]` empirical quantile band.
    pub winsor_quantile: Option<f64>,
}

impl Default for McSolverConfig {
    fn default() -> Self {
        Self { basis: BasisSpec::default(), storage: Storage::default(), winsor_quantile: Some(1.0 - 1e-6) }
    }
}

/// Explicit least-squares backward scheme on simulated paths.
///
/// With `Ê_i` the regression on the state `(W_{t_i}, N_{t_i})` and
/// `R = Y_{i+1} − Ê_i[Y_{i+1}]`:
/// `Z = Ê_i[R ΔW]/Δt`, `U_k = Ê_i[R (ΔN_k − p_k)]/p_k` with `p_k = ξλ_k Δt`,
/// and `Y_i = Ê_i[Y_{i+1}] + f(t_i, Ê_i[Y_{i+1}], Z, U) Δt`.
pub fn solve_mc(gen: &Generator, terminal: &Terminal, paths: &PathBundle, cfg: &McSolverConfig) -> Result<BsdeSolution> {
    let (d, k) = (paths.dim(), paths.n_marks());
    if gen.model().brownian_dim() != d || gen.model().n_marks() != k {
        return Err(Error::Contract(format!(
            "generator model (d = {}, K = {}) does not match the paths (d = {d}, K = {k})",
            gen.model().brownian_dim(),
            gen.model().n_marks()
        )));
    }
    terminal.validate(d, k)?;
    let grid = *paths.grid();
    let (n, np, dt) = (grid.n_steps(), paths.n_paths(), grid.dt());

    let final_state = paths.states_at(n);
    let width = d + k;
    let mut y_next: Vec<f64> = (0..np)
        .into_par_iter()
        .map(|p| {
            let row = &final_state[p * width..(p + 1) * width];
            let counts: Vec<u32> = row[d..].iter().map(|&c| c as u32).collect();
            terminal.eval(&row[..d], &counts)
        })
        .collect();
    if let Some(p) = y_next.iter().position(|x| !x.is_finite()) {
        return Err(Error::Numerical(format!("terminal value is not finite on path {p}")));
    }
    if let Some(q) = cfg.winsor_quantile {
        if !(0.5..=1.0).contains(&q) {
            return Err(Error::Config(format!("winsorization quantile must lie in [0.5, 1], got {q}")));
        }
        let (lo, hi) = (quantile(&y_next, 1.0 - q), quantile(&y_next, q));
        for y in y_next.iter_mut() {
            *y = y.clamp(lo, hi);
        }
    }
    let eta = y_next.clone();
    let mut drift_sum = vec![0.0; np];

    let full = cfg.storage == Storage::Full;
    let mut layers = SolutionLayers { y: Vec::new(), z: Vec::new(), u: Vec::new(), v_incr: Vec::new(), m_incr: Vec::new() };
    if full {
        layers.y.push(y_next.clone());
    }
    let mut diagnostics = SolveDiagnostics::default();
    let (mut z_energy, mut u_energy, mut v_variation) = (vec![0.0; np], vec![0.0; np], vec![0.0; np]);
    let (mut z0, mut u0) = (Vec::new(), Vec::new());

    for i in (0..n).rev() {
        let t = grid.t(i);
        let proj = Projection::new(&paths.states_at(i), width, &cfg.basis, i)?;
        let e = proj.project(&y_next);
        let resid: Vec<f64> = y_next.iter().zip(&e).map(|(a, b)| a - b).collect();

        let mut z = vec![0.0; np * d];
        for j in 0..d {
            let target: Vec<f64> = (0..np).map(|p| resid[p] * paths.dw(p, i, j) / dt).collect();
            for (p, v) in proj.project(&target).into_iter().enumerate() {
                z[p * d + j] = v;
            }
        }
        let rates = gen.model().rates(t);
        let mut u = vec![0.0; np * k];
        for mk in 0..k {
            let mean_count = rates[mk] * dt;
            if mean_count <= 0.0 {
                continue;
            }
            let target: Vec<f64> = (0..np)
                .map(|p| resid[p] * (f64::from(paths.jump(p, i, mk)) - mean_count) / mean_count)
                .collect();
            for (p, v) in proj.project(&target).into_iter().enumerate() {
                u[p * k + mk] = v;
            }
        }

        let f: Vec<f64> = (0..np)
            .into_par_iter()
            .map(|p| gen.eval(t, e[p], &z[p * d..(p + 1) * d], &u[p * k..(p + 1) * k]))
            .collect();
        if let Some(p) = f.iter().position(|x| !x.is_finite()) {
            return Err(Error::Numerical(format!(
                "generator overflowed at step {i} on path {p}; winsorize the terminal condition or reduce its scale"
            )));
        }
        let y: Vec<f64> = e.iter().zip(&f).map(|(a, b)| a + b * dt).collect();
        for p in 0..np {
            drift_sum[p] += f[p] * dt;
            z_energy[p] += z[p * d..(p + 1) * d].iter().map(|x| x * x).sum::<f64>() * dt;
            u_energy[p] += u[p * k..(p + 1) * k].iter().zip(&rates).map(|(x, r)| x * x * r).sum::<f64>() * dt;
            v_variation[p] += f[p].abs() * dt;
        }
        diagnostics.sup_abs_generator = f.iter().fold(diagnostics.sup_abs_generator, |a, x| a.max(x.abs()));
        if i == 0 {
            z0 = z[..d].to_vec();
            u0 = u[..k].to_vec();
        }
        if full {
            layers.y.push(y.clone());
            layers.z.push(z);
            layers.u.push(u);
            layers.v_incr.push(f.iter().map(|x| x * dt).collect());
            layers.m_incr.push(resid);
        }
        y_next = y;
    }

    let total: Vec<f64> = eta.iter().zip(&drift_sum).map(|(a, b)| a + b).collect();
    let (_, se) = mean_and_se(&total);
    if full {
        layers.y.reverse();
        layers.z.reverse();
        layers.u.reverse();
        layers.v_incr.reverse();
        layers.m_incr.reverse();
    }
    Ok(BsdeSolution {
        backend: Backend::MonteCarlo,
        grid,
        dim: d,
        n_marks: k,
        generator: gen.name(),
        y0: mean(&y_next),
        z0,
        u0,
        y0_standard_error: Some(se),
        picard_tolerance: 0.0,
        moments: SolutionMoments { z_energy: mean(&z_energy), u_energy: mean(&u_energy), v_variation: mean(&v_variation) },
        diagnostics,
        layers: full.then_some(layers),
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::generators::{CustomGenerator, GeneratorKind, StructureParams};
    use crate::jump_model::{simulate_paths, JumpModel, MarkSpace, TimeGrid};

    fn canonical(model: Arc<JumpModel>) -> Generator {
        Generator::new(GeneratorKind::Canonical, StructureParams::canonical(1.0).unwrap(), model).unwrap()
    }

    #[test]
    fn martingale_case_has_zero_root() {
        let model = Arc::new(JumpModel::brownian(1).unwrap());
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let paths = simulate_paths(&model, &grid, 20_000, 5).unwrap();
        let f = CustomGenerator::new("zero", |_, _, _, _| 0.0);
        let gen = Generator::new(GeneratorKind::Custom(f), StructureParams::canonical(1.0).unwrap(), model).unwrap();
        let sol = solve_mc(&gen, &Terminal::brownian(), &paths, &McSolverConfig::default()).unwrap();
        let se = sol.y0_standard_error.unwrap();
        assert!(sol.y0.abs() <= 4.0 * se, "{} ± {se}", sol.y0);
        let layers = sol.layers().unwrap();
        let zbar = mean(&layers.z[5]);
        assert!((zbar - 1.0).abs() < 0.05, "{zbar}");
    }

    #[test]
    fn gaussian_exponential_moment() {
        let model = Arc::new(JumpModel::brownian(1).unwrap());
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let paths = simulate_paths(&model, &grid, 20_000, 11).unwrap();
        let sol = solve_mc(&canonical(model), &Terminal::brownian(), &paths, &McSolverConfig::default()).unwrap();
        assert!((sol.y0 - 0.5).abs() < 0.05, "{}", sol.y0);
    }

    #[test]
    fn poisson_exponential_moment() {
        let model = Arc::new(JumpModel::with_constant_intensity(MarkSpace::new(vec![1.0], vec![1.0]).unwrap(), 1.0).unwrap());
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let paths = simulate_paths(&model, &grid, 20_000, 12).unwrap();
        let eta = Terminal::counts(vec![2f64.ln()]);
        let sol = solve_mc(&canonical(model), &eta, &paths, &McSolverConfig::default()).unwrap();
        assert!((sol.y0 - 1.0).abs() < 0.05, "{}", sol.y0);
        assert!((sol.u0[0] - 2f64.ln()).abs() < 0.05, "{:?}", sol.u0);
    }

    #[test]
    fn winsorization_quantile_is_validated() {
        let model = Arc::new(JumpModel::brownian(1).unwrap());
        let paths = simulate_paths(&model, &TimeGrid::new(1.0, 2).unwrap(), 100, 1).unwrap();
        let cfg = McSolverConfig { winsor_quantile: Some(0.2), ..Default::default() };
        assert!(matches!(solve_mc(&canonical(model), &Terminal::brownian(), &paths, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let model = Arc::new(JumpModel::brownian(2).unwrap());
        let grid = TimeGrid::new(1.0, 2).unwrap();
        let paths = simulate_paths(&model, &grid, 10, 1).unwrap();
        let gen = canonical(Arc::new(JumpModel::brownian(1).unwrap()));
        assert!(solve_mc(&gen, &Terminal::brownian(), &paths, &McSolverConfig::default()).is_err());
    }
}
