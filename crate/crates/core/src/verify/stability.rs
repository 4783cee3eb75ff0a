use super::{ReportBuilder, VerificationReport};
use crate::bsde::{BsdeSolution, LadderFamily, Terminal};
use crate::entropic::{entropy_bound, ConditionalBackend};
use crate::error::{Error, Result};
use crate::generators::StructureParams;
use crate::jump_model::{Lattice, LatticePaths};
use crate::numeric::mean;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityConfig {
    pub n_paths: usize,
    pub seed: u64,
    /// Slack allowed when a later schedule gap exceeds an earlier one.
    pub tolerance: f64,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self { n_paths: 10_000, seed: 0, tolerance: 1e-12 }
    }
}

/// Constant `C` with `E[∫|dV|] ≤ C` and `E[M*] ≤ C` for every solution
/// dominated by an entropy bound `B`.
///
/// `Q = e^{4B}(1 + 2Λ_T + 2 C_T B)`, `κ = max(1, (2B / (1 − e^{−2B}))²)` and
/// `C = max(Λ_T + c* B T + max(½, e^{2B}) Q, 2 √(κ Q))`.
pub fn uniform_bound_constant(bound: f64, lambda_t: f64, c_t: f64, c_star: f64, horizon: f64) -> f64 {
    let q = (4.0 * bound).exp() * (1.0 + 2.0 * lambda_t + 2.0 * c_t * bound);
    let ratio = if bound > 0.0 { 2.0 * bound / -(-2.0 * bound).exp_m1() } else { 1.0 };
    let kappa = (ratio * ratio).max(1.0);
    let linear = lambda_t + c_star * bound * horizon + (2.0 * bound).exp().max(0.5) * q;
    linear.max(2.0 * (kappa * q).sqrt())
}

struct PathSups {
    y: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    m: Vec<Vec<f64>>,
}

fn along_paths(sol: &BsdeSolution, lattice: &Lattice, paths: &LatticePaths) -> Result<PathSups> {
    let layers = sol.layers()?;
    let n = lattice.n_steps();
    let mut out = PathSups { y: Vec::new(), v: Vec::new(), m: Vec::new() };
    for p in 0..paths.n_paths {
        let (mut y, mut v, mut m) = (Vec::with_capacity(n + 1), Vec::with_capacity(n + 1), Vec::with_capacity(n + 1));
        let (mut cv, mut cm) = (0.0, 0.0);
        for i in 0..=n {
            let node = paths.node(p, i);
            y.push(layers.y[i][node]);
            v.push(cv);
            m.push(cm);
            if i < n {
                let nb = lattice.branches(i).len();
                cv += layers.v_incr[i][node];
                cm += layers.m_incr[i][node * nb + paths.branch(p, i)];
            }
        }
        out.y.push(y);
        out.v.push(v);
        out.m.push(m);
    }
    Ok(out)
}

fn mean_sup_gap(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let sups: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max))
        .collect();
    mean(&sups)
}

/// Cauchy gaps `E[(Y' − Y)*]`, `E[(V' − V)*]`, `E[(M' − M)*]` between
/// consecutive schedule entries of a ladder on sampled lattice paths, which
/// must not increase along the schedule, and the uniform bounds
/// `E[∫|dV|] ≤ C`, `E[M*] ≤ C` with `C` from [`uniform_bound_constant`].
pub fn stability_diagnostics(
    family: &LadderFamily,
    lattice: &Lattice,
    terminal: &Terminal,
    params: &StructureParams,
    cfg: &StabilityConfig,
) -> Result<VerificationReport> {
    if cfg.n_paths == 0 {
        return Err(Error::Config("stability diagnostics need at least one path".into()));
    }
    let n = lattice.n_steps();
    let schedule = family.schedule();
    let paths = lattice.sample_paths(cfg.n_paths, cfg.seed);
    let sampled = schedule
        .iter()
        .map(|e| along_paths(&e.solution, lattice, &paths))
        .collect::<Result<Vec<_>>>()?;

    let eta = lattice.node_values(n, |s| terminal.eval(&[s.w], &s.counts));
    let bound = entropy_bound(&ConditionalBackend::LatticeExact(lattice), &eta, params)?;
    let b = bound.values.iter().flatten().fold(0.0f64, |a, v| a.max(*v));
    let (lam, cum) = params.cumulative(lattice.grid());
    let c = uniform_bound_constant(b, lam[n], cum[n], params.c_star(), lattice.grid().horizon());

    let mut mono = ReportBuilder::new("cauchy_gaps_nonincreasing", cfg.tolerance);
    let mut metrics = Vec::new();
    let gaps: Vec<[f64; 3]> = sampled
        .windows(2)
        .map(|w| [mean_sup_gap(&w[0].y, &w[1].y), mean_sup_gap(&w[0].v, &w[1].v), mean_sup_gap(&w[0].m, &w[1].m)])
        .collect();
    for (j, g) in gaps.iter().enumerate() {
        let (a, b) = (&schedule[j], &schedule[j + 1]);
        let tag = format!("({},{})->({},{})", a.n, a.m, b.n, b.m);
        metrics.push((format!("y_gap{tag}"), g[0]));
        metrics.push((format!("v_gap{tag}"), g[1]));
        metrics.push((format!("m_gap{tag}"), g[2]));
        if j > 0 {
            for (q, name) in ["Y", "V", "M"].iter().enumerate() {
                let v = g[q] - gaps[j - 1][q];
                mono.observe(v.max(0.0), || format!("{name} gap grows at {tag}: {} > {}", g[q], gaps[j - 1][q]));
            }
        }
    }

    let mut bounds = ReportBuilder::new("uniform_bounds", 0.0);
    let (mut worst_v, mut worst_m) = (0.0f64, 0.0f64);
    for (e, s) in schedule.iter().zip(&sampled) {
        let v_var = e.solution.moments.v_variation;
        let m_sup = mean(&s.m.iter().map(|p| p.iter().fold(0.0f64, |a, x| a.max(x.abs()))).collect::<Vec<_>>());
        worst_v = worst_v.max(v_var);
        worst_m = worst_m.max(m_sup);
        bounds.observe((v_var - c).max(0.0), || format!("E[∫|dV|] = {v_var} > C = {c} at ({},{})", e.n, e.m));
        bounds.observe((m_sup - c).max(0.0), || format!("E[M*] = {m_sup} > C = {c} at ({},{})", e.n, e.m));
    }
    let mut report = VerificationReport::combine("stability", &[mono.finish(), bounds.finish()]);
    report.metrics = metrics;
    report.metrics.push(("entropy_bound_max".into(), b));
    report.metrics.push(("bound_constant".into(), c));
    report.metrics.push(("max_v_variation".into(), worst_v));
    report.metrics.push(("max_m_sup".into(), worst_m));
    if let Some(last) = gaps.last() {
        report.metrics.push(("final_y_gap".into(), last[0]));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::bsde::{solve_ladder, LadderConfig};
    use crate::generators::{Generator, GeneratorKind};
    use crate::jump_model::{JumpModel, MarkSpace, TimeGrid};

    #[test]
    fn bound_constant_at_zero() {
        // B = 0: Q = 1 + 2Λ_T, κ = 1.
        let c = uniform_bound_constant(0.0, 0.5, 0.0, 0.0, 1.0);
        assert!((c - 2.5f64.max(2.0 * 2f64.sqrt())).abs() < 1e-15);
        assert!(uniform_bound_constant(1.0, 0.0, 0.0, 0.0, 1.0) > uniform_bound_constant(0.5, 0.0, 0.0, 0.0, 1.0));
    }

    #[test]
    fn canonical_ladder_gaps_shrink() {
        let model = Arc::new(JumpModel::with_constant_intensity(MarkSpace::new(vec![1.0], vec![1.0]).unwrap(), 1.0).unwrap());
        let lat = Lattice::build(&model, &TimeGrid::new(1.0, 16).unwrap(), 3, 1).unwrap();
        let params = StructureParams::canonical(1.0).unwrap();
        let base = Generator::new(GeneratorKind::Canonical, params.clone(), model).unwrap();
        let eta = Terminal::Affine { constant: 0.0, brownian: vec![1.5], counts: vec![1.2] };
        let levels = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let fam = solve_ladder(&base, &eta, &lat, &levels, &levels, &LadderConfig::default()).unwrap();
        let cfg = StabilityConfig { n_paths: 2_000, ..Default::default() };
        let r = stability_diagnostics(&fam, &lat, &eta, &params, &cfg).unwrap();
        assert!(r.passed, "{r}");
        assert!(r.metric("final_y_gap").unwrap() < r.metric("y_gap(1,1)->(2,2)").unwrap());
    }
}
