use rayon::prelude::*;

use super::{Backend, BsdeSolution, SolutionLayers, SolutionMoments, SolveDiagnostics, Storage, Terminal};
use crate::error::{Error, Result};
use crate::generators::Generator;
use crate::jump_model::{Branch, Lattice};

const CHUNK: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeSolverConfig {
    /// Fixed-point stopping threshold, relative once `|y| > 1`.
    pub picard_tol: f64,
    pub max_iter: usize,
    pub storage: Storage,
}

impl Default for LatticeSolverConfig {
    fn default() -> Self {
        Self { picard_tol: 1e-10, max_iter: 100, storage: Storage::Full }
    }
}

#[derive(Default)]
struct Layer {
    y: Vec<f64>,
    z: Vec<f64>,
    u: Vec<f64>,
    v: Vec<f64>,
    m: Vec<f64>,
    h_z: Vec<f64>,
    h_u: Vec<f64>,
    h_v: Vec<f64>,
    iterations: usize,
    residual: f64,
    sup_f: f64,
}

impl Layer {
    fn append(&mut self, other: Layer) {
        self.y.extend(other.y);
        self.z.extend(other.z);
        self.u.extend(other.u);
        self.v.extend(other.v);
        self.m.extend(other.m);
        self.h_z.extend(other.h_z);
        self.h_u.extend(other.h_u);
        self.h_v.extend(other.h_v);
        self.iterations = self.iterations.max(other.iterations);
        self.residual = self.residual.max(other.residual);
        self.sup_f = self.sup_f.max(other.sup_f);
    }
}

struct StepContext<'a> {
    gen: &'a Generator,
    lattice: &'a Lattice,
    i: usize,
    t: f64,
    dt: f64,
    branches: &'a [Branch],
    probs: Vec<f64>,
    rates: Vec<f64>,
    cfg: &'a LatticeSolverConfig,
}

/// Backward induction on the lattice.
///
/// At each node `Z = E_i[Y_{i+1} ΔW]/Δt`, `U_k = E_i[Y_{i+1}(B_k − p_k)]/(p_k(1 − p_k))`
/// with `B_k` the jump indicator of mark `k` (zero when `p_k = 0`), and `y`
/// solves `y = E_i[Y_{i+1}] + f(t_i, y, Z, U) Δt` by fixed-point iteration.
pub fn solve_lattice(
    gen: &Generator,
    terminal: &Terminal,
    lattice: &Lattice,
    cfg: &LatticeSolverConfig,
) -> Result<BsdeSolution> {
    let k = lattice.n_marks();
    if gen.model().n_marks() != k || gen.model().brownian_dim() != 1 {
        return Err(Error::Contract(format!(
            "generator model (d = {}, K = {}) does not match the lattice (d = 1, K = {k})",
            gen.model().brownian_dim(),
            gen.model().n_marks()
        )));
    }
    terminal.validate(1, k)?;
    if !(cfg.picard_tol > 0.0) || cfg.max_iter == 0 {
        return Err(Error::Config("Picard tolerance and iteration cap must be positive".into()));
    }
    let n = lattice.n_steps();
    let grid = *lattice.grid();

    let eta = lattice.node_values(n, |s| terminal.eval(&[s.w], &s.counts));
    if let Some(pos) = eta.iter().position(|x| !x.is_finite()) {
        return Err(Error::Numerical(format!("terminal value is not finite at node {pos}")));
    }
    let zeros = vec![0.0; eta.len()];
    let mut next = Layer { y: eta, h_z: zeros.clone(), h_u: zeros.clone(), h_v: zeros, ..Layer::default() };

    let full = cfg.storage == Storage::Full;
    let mut stored: Vec<Layer> = Vec::new();
    let mut diagnostics = SolveDiagnostics::default();

    for i in (0..n).rev() {
        let branches = lattice.branches(i);
        let ctx = StepContext {
            gen,
            lattice,
            i,
            t: grid.t(i),
            dt: grid.dt(),
            branches,
            probs: branches.iter().map(|b| b.prob).collect(),
            rates: gen.model().rates(grid.t(i)),
            cfg,
        };
        let n_nodes = lattice.n_nodes(i);
        let chunks: Vec<Result<Layer>> = (0..n_nodes.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| solve_chunk(&ctx, &next, c * CHUNK..((c + 1) * CHUNK).min(n_nodes)))
            .collect();
        let mut layer = Layer::default();
        for chunk in chunks {
            layer.append(chunk?);
        }
        diagnostics.max_picard_iterations = diagnostics.max_picard_iterations.max(layer.iterations);
        diagnostics.max_picard_residual = diagnostics.max_picard_residual.max(layer.residual);
        diagnostics.sup_abs_generator = diagnostics.sup_abs_generator.max(layer.sup_f);

        let done = std::mem::replace(&mut next, layer);
        if full {
            stored.push(done);
        }
    }

    let root = next;
    let moments = SolutionMoments { z_energy: root.h_z[0], u_energy: root.h_u[0], v_variation: root.h_v[0] };
    let (y0, z0, u0) = (root.y[0], root.z.clone(), root.u.clone());
    let layers = full.then(|| {
        stored.push(root);
        stored.reverse();
        let mut out = SolutionLayers { y: Vec::new(), z: Vec::new(), u: Vec::new(), v_incr: Vec::new(), m_incr: Vec::new() };
        for (i, l) in stored.into_iter().enumerate() {
            out.y.push(l.y);
            if i < n {
                out.z.push(l.z);
                out.u.push(l.u);
                out.v_incr.push(l.v);
                out.m_incr.push(l.m);
            }
        }
        out
    });

    Ok(BsdeSolution {
        backend: Backend::Lattice,
        grid,
        dim: 1,
        n_marks: k,
        generator: gen.name(),
        y0,
        z0,
        u0,
        y0_standard_error: None,
        picard_tolerance: cfg.picard_tol,
        moments,
        diagnostics,
        layers,
    })
}

fn solve_chunk(ctx: &StepContext<'_>, next: &Layer, nodes: std::ops::Range<usize>) -> Result<Layer> {
    let k = ctx.lattice.n_marks();
    let nb = ctx.branches.len();
    let len = nodes.len();
    let mut out = Layer {
        y: Vec::with_capacity(len),
        z: Vec::with_capacity(len),
        u: Vec::with_capacity(len * k),
        v: Vec::with_capacity(len),
        m: Vec::with_capacity(len * nb),
        h_z: Vec::with_capacity(len),
        h_u: Vec::with_capacity(len),
        h_v: Vec::with_capacity(len),
        ..Layer::default()
    };
    let jump_probs: Vec<f64> = (0..k).map(|m| ctx.lattice.jump_prob(ctx.i, m)).collect();
    let mut u = vec![0.0; k];
    let mut children = vec![0usize; nb];

    for idx in nodes {
        let base = ctx.lattice.child_base(ctx.i, idx);
        for (c, br) in children.iter_mut().zip(ctx.branches) {
            *c = base + br.offset;
        }
        let (mut e, mut zw) = (0.0, 0.0);
        let (mut ez, mut eu, mut ev) = (0.0, 0.0, 0.0);
        for (j, br) in ctx.branches.iter().enumerate() {
            let y = next.y[children[j]];
            e += ctx.probs[j] * y;
            zw += ctx.probs[j] * y * br.dw;
            ez += ctx.probs[j] * next.h_z[children[j]];
            eu += ctx.probs[j] * next.h_u[children[j]];
            ev += ctx.probs[j] * next.h_v[children[j]];
        }
        let z = zw / ctx.dt;
        for (mk, slot) in u.iter_mut().enumerate() {
            let p = jump_probs[mk];
            *slot = if p > 0.0 && p < 1.0 {
                let mut acc = 0.0;
                for (j, br) in ctx.branches.iter().enumerate() {
                    let bit = if br.jumps(mk) { 1.0 } else { 0.0 };
                    acc += ctx.probs[j] * next.y[children[j]] * (bit - p);
                }
                acc / (p * (1.0 - p))
            } else {
                0.0
            };
        }

        let zs = [z];
        let (y, f, iterations, residual) = picard(ctx, idx, e, &zs, &u)?;
        out.y.push(y);
        out.z.push(z);
        out.u.extend_from_slice(&u);
        out.v.push(f * ctx.dt);
        for &c in &children {
            out.m.push(next.y[c] - e);
        }
        let u_energy: f64 = u.iter().zip(&ctx.rates).map(|(x, r)| x * x * r).sum::<f64>() * ctx.dt;
        out.h_z.push(z * z * ctx.dt + ez);
        out.h_u.push(u_energy + eu);
        out.h_v.push(f.abs() * ctx.dt + ev);
        out.iterations = out.iterations.max(iterations);
        out.residual = out.residual.max(residual);
        out.sup_f = out.sup_f.max(f.abs());
    }
    Ok(out)
}

/// Solves `y = e + f(t, y, z, u) Δt`; returns `(y, f(y), iterations, last step)`.
fn picard(ctx: &StepContext<'_>, node: usize, e: f64, z: &[f64], u: &[f64]) -> Result<(f64, f64, usize, f64)> {
    let mut y = e;
    let mut residual = f64::INFINITY;
    for it in 1..=ctx.cfg.max_iter {
        let f = ctx.gen.eval(ctx.t, y, z, u);
        if !f.is_finite() {
            return Err(Error::Numerical(format!(
                "generator is not finite at step {}, node {node} (y = {y}, z = {z:?}, u = {u:?})",
                ctx.i
            )));
        }
        let y_new = e + f * ctx.dt;
        residual = (y_new - y).abs();
        y = y_new;
        if residual <= ctx.cfg.picard_tol * y.abs().max(1.0) {
            let f = ctx.gen.eval(ctx.t, y, z, u);
            return Ok((y, f, it, residual));
        }
    }
    Err(Error::PicardDivergence { step: ctx.i, node, residual, iterations: ctx.cfg.max_iter })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::entropic::{cond_expect, rho, ConditionalBackend};
    use crate::generators::{CustomGenerator, GeneratorKind, StructureParams};
    use crate::jump_model::{JumpModel, MarkSpace, TimeGrid};

    fn brownian() -> Arc<JumpModel> {
        Arc::new(JumpModel::brownian(1).unwrap())
    }

    fn one_mark(rate: f64) -> Arc<JumpModel> {
        Arc::new(JumpModel::with_constant_intensity(MarkSpace::new(vec![1.0], vec![rate]).unwrap(), 1.0).unwrap())
    }

    fn zero_gen(model: Arc<JumpModel>) -> Generator {
        let f = CustomGenerator::new("zero", |_, _, _, _| 0.0);
        Generator::new(GeneratorKind::Custom(f), StructureParams::canonical(1.0).unwrap(), model).unwrap()
    }

    fn canonical(model: Arc<JumpModel>, delta: f64) -> Generator {
        Generator::new(GeneratorKind::Canonical, StructureParams::canonical(delta).unwrap(), model).unwrap()
    }

    #[test]
    fn linear_case_recovers_representation() {
        let model = brownian();
        let lat = Lattice::build(&model, &TimeGrid::new(1.0, 20).unwrap(), 3, 0).unwrap();
        let sol = solve_lattice(&zero_gen(model), &Terminal::brownian(), &lat, &LatticeSolverConfig::default()).unwrap();
        assert!(sol.y0.abs() < 1e-14);
        let layers = sol.layers().unwrap();
        assert!(layers.z.iter().flatten().all(|z| (z - 1.0).abs() < 1e-12));
        assert!((sol.moments.z_energy - 1.0).abs() < 1e-12);
        assert_eq!(sol.moments.v_variation, 0.0);
    }

    #[test]
    fn terminal_layer_is_exact() {
        let model = one_mark(2.0);
        let lat = Lattice::build(&model, &TimeGrid::new(1.0, 6).unwrap(), 2, 1).unwrap();
        let eta = Terminal::Affine { constant: 0.3, brownian: vec![-1.0], counts: vec![0.7] };
        let sol = solve_lattice(&canonical(model, 1.0), &eta, &lat, &LatticeSolverConfig::default()).unwrap();
        let expected = lat.node_values(6, |s| eta.eval(&[s.w], &s.counts));
        assert_eq!(sol.y(6).unwrap(), expected.as_slice());
    }

    #[test]
    fn jump_integrand_is_branch_difference() {
        // With a single mark U is E[Y | jump] − E[Y | no jump].
        let model = one_mark(1.0);
        let lat = Lattice::build(&model, &TimeGrid::new(1.0, 4).unwrap(), 2, 1).unwrap();
        let eta = Terminal::Affine { constant: 0.0, brownian: vec![0.5], counts: vec![2.0] };
        let sol = solve_lattice(&zero_gen(model), &eta, &lat, &LatticeSolverConfig::default()).unwrap();
        let layers = sol.layers().unwrap();
        assert!(layers.u.iter().flatten().all(|u| (u - 2.0).abs() < 1e-12));
        assert!(layers.z.iter().flatten().all(|z| (z - 0.5).abs() < 1e-12));
    }

    #[test]
    fn martingale_increments_have_zero_conditional_mean() {
        let model = one_mark(1.5);
        let lat = Lattice::build(&model, &TimeGrid::new(1.0, 8).unwrap(), 3, 1).unwrap();
        let eta = Terminal::Affine { constant: 0.0, brownian: vec![1.0], counts: vec![-0.4] }.abs();
        let params = StructureParams::constant(0.2, 0.5, 1.0).unwrap();
        let gen = Generator::new(GeneratorKind::UpperBound, params, model).unwrap();
        let sol = solve_lattice(&gen, &eta, &lat, &LatticeSolverConfig::default()).unwrap();
        let layers = sol.layers().unwrap();
        for i in 0..8 {
            let probs: Vec<f64> = lat.branches(i).iter().map(|b| b.prob).collect();
            let nb = probs.len();
            for node in 0..lat.n_nodes(i) {
                let m: f64 = (0..nb).map(|j| probs[j] * layers.m_incr[i][node * nb + j]).sum();
                assert!(m.abs() < 1e-12);
                let base = lat.child_base(i, node);
                for (j, br) in lat.branches(i).iter().enumerate() {
                    let dy = layers.y[i + 1][base + br.offset] - layers.y[i][node];
                    let rebuilt = -layers.v_incr[i][node] + layers.m_incr[i][node * nb + j];
                    assert!((dy - rebuilt).abs() < 1e-9);
                }
            }
        }
        assert!(sol.diagnostics.max_picard_iterations > 1);
    }

    #[test]
    fn implicit_step_solves_fixed_point() {
        let model = brownian();
        let lat = Lattice::build(&model, &TimeGrid::new(1.0, 10).unwrap(), 2, 0).unwrap();
        let params = StructureParams::constant(0.3, 2.0, 1.0).unwrap();
        let gen = Generator::new(GeneratorKind::UpperBound, params, model).unwrap();
        let sol = solve_lattice(&gen, &Terminal::brownian(), &lat, &LatticeSolverConfig::default()).unwrap();
        let layers = sol.layers().unwrap();
        for i in 0..10 {
            let e = lat.expect_step(i, &layers.y[i + 1]);
            for node in 0..lat.n_nodes(i) {
                let y = layers.y[i][node];
                let f = gen.eval(lat.grid().t(i), y, &[layers.z[i][node]], &[]);
                assert!((y - e[node] - f * lat.dt()).abs() < 1e-10 * y.abs().max(1.0));
            }
        }
    }

    #[test]
    fn canonical_solution_tracks_entropic_process() {
        for (n, branching) in [(40, 3), (80, 3)] {
            let model = one_mark(1.0);
            let lat = Lattice::build(&model, &TimeGrid::new(1.0, n).unwrap(), branching, 1).unwrap();
            let eta = Terminal::Affine { constant: 0.0, brownian: vec![0.8], counts: vec![-0.5] };
            let sol = solve_lattice(&canonical(model, 1.0), &eta, &lat, &LatticeSolverConfig::default()).unwrap();
            let backend = ConditionalBackend::LatticeExact(&lat);
            let payoff = lat.node_values(n, |s| eta.eval(&[s.w], &s.counts));
            let r = rho(&backend, &payoff, n, 0, 1.0).unwrap()[0];
            assert!((sol.y0 - r).abs() < 2.0 / n as f64, "{} vs {r}", sol.y0);
        }
    }

    #[test]
    fn gaussian_and_poisson_exponential_moments() {
        let model = brownian();
        let lat = Lattice::build(&model, &TimeGrid::new(1.0, 100).unwrap(), 3, 0).unwrap();
        let sol = solve_lattice(&canonical(model, 1.0), &Terminal::brownian(), &lat, &LatticeSolverConfig::default()).unwrap();
        assert!((sol.y0 - 0.5).abs() < 1e-12);

        let model = one_mark(1.0);
        let lat = Lattice::build(&model, &TimeGrid::new(1.0, 100).unwrap(), 2, 1).unwrap();
        let eta = Terminal::counts(vec![2f64.ln()]);
        let sol = solve_lattice(&canonical(model, 1.0), &eta, &lat, &LatticeSolverConfig::default()).unwrap();
        assert!((sol.y0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn root_only_matches_full() {
        let model = one_mark(1.0);
        let lat = Lattice::build(&model, &TimeGrid::new(1.0, 12).unwrap(), 2, 1).unwrap();
        let eta = Terminal::Affine { constant: 0.0, brownian: vec![1.0], counts: vec![0.3] }.abs();
        let gen = canonical(model, 1.0);
        let full = solve_lattice(&gen, &eta, &lat, &LatticeSolverConfig::default()).unwrap();
        let cfg = LatticeSolverConfig { storage: Storage::RootOnly, ..Default::default() };
        let root = solve_lattice(&gen, &eta, &lat, &cfg).unwrap();
        assert_eq!(full.y0, root.y0);
        assert_eq!(full.moments, root.moments);
        assert!(root.layers().is_err());
    }

    #[test]
    fn moments_match_forward_node_probabilities() {
        let model = one_mark(1.0);
        let lat = Lattice::build(&model, &TimeGrid::new(1.0, 6).unwrap(), 3, 1).unwrap();
        let eta = Terminal::Affine { constant: 0.0, brownian: vec![1.0], counts: vec![0.5] }.abs();
        let sol = solve_lattice(&canonical(model, 1.0), &eta, &lat, &LatticeSolverConfig::default()).unwrap();
        let layers = sol.layers().unwrap();
        let probs = lat.node_probabilities();
        let dt = lat.dt();
        let (mut ze, mut ue, mut ve) = (0.0, 0.0, 0.0);
        for i in 0..6 {
            for (node, p) in probs[i].iter().enumerate() {
                ze += p * layers.z[i][node].powi(2) * dt;
                ue += p * layers.u[i][node].powi(2) * dt;
                ve += p * layers.v_incr[i][node].abs();
            }
        }
        assert!((sol.moments.z_energy - ze).abs() < 1e-12);
        assert!((sol.moments.u_energy - ue).abs() < 1e-12);
        assert!((sol.moments.v_variation - ve).abs() < 1e-12);
    }

    #[test]
    fn cash_shift_in_linear_case() {
        let model = brownian();
        let lat = Lattice::build(&model, &TimeGrid::new(1.0, 10).unwrap(), 2, 0).unwrap();
        let gen = zero_gen(model);
        let a = solve_lattice(&gen, &Terminal::Affine { constant: -1.0, brownian: vec![1.0], counts: vec![] }, &lat, &Default::default()).unwrap();
        let b = solve_lattice(&gen, &Terminal::brownian(), &lat, &Default::default()).unwrap();
        let backend = ConditionalBackend::LatticeExact(&lat);
        let w = lat.node_values(10, |s| s.w);
        let mean = cond_expect(&backend, &w, 10, 4).unwrap();
        for (node, m) in mean.iter().enumerate() {
            assert!((a.y(4).unwrap()[node] - (b.y(4).unwrap()[node] - 1.0)).abs() < 1e-14);
            assert!((b.y(4).unwrap()[node] - m).abs() < 1e-14);
        }
    }

    #[test]
    fn divergence_is_reported() {
        let model = brownian();
        let lat = Lattice::build(&model, &TimeGrid::new(1.0, 2).unwrap(), 2, 0).unwrap();
        let f = CustomGenerator::new("expanding", |_, y, _, _| 5.0 * y);
        let gen = Generator::new(GeneratorKind::Custom(f), StructureParams::canonical(1.0).unwrap(), model).unwrap();
        let eta = Terminal::constant(1.0);
        let err = solve_lattice(&gen, &eta, &lat, &LatticeSolverConfig::default()).unwrap_err();
        assert!(matches!(err, Error::PicardDivergence { step: 1, .. }));
    }

    #[test]
    fn mismatched_model_is_rejected() {
        let lat = Lattice::build(&brownian(), &TimeGrid::new(1.0, 2).unwrap(), 2, 0).unwrap();
        let gen = canonical(one_mark(1.0), 1.0);
        assert!(matches!(
            solve_lattice(&gen, &Terminal::brownian(), &lat, &Default::default()),
            Err(Error::Contract(_))
        ));
    }
}
