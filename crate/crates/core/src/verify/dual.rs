use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ReportBuilder, VerificationReport};
use crate::bsde::{solve_lattice, LatticeSolverConfig, Terminal};
use crate::error::{Error, Result};
use crate::generators::{Generator, GeneratorKind};
use crate::jump_model::Lattice;

/// Finite set of density controls `(β, κ)` with `|β| ≤ n` and
/// `max(−1, −n) ≤ κ ≤ n`, applied to every mark alike.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlGrid {
    betas: Vec<f64>,
    kappas: Vec<f64>,
    resolution: f64,
}

impl ControlGrid {
    /// `β ∈ {−n, −n + h, …, n}` and `κ ∈ {max(−1, −n), … + h, …, n}`; the
    /// endpoint `n` is always included.
    pub fn uniform(n: f64, h: f64) -> Result<Self> {
        if !(n.is_finite() && n > 0.0 && h.is_finite() && h > 0.0) {
            return Err(Error::Config(format!("control grid needs n > 0 and h > 0, got n = {n}, h = {h}")));
        }
        let ladder = |lo: f64| {
            let steps = ((n - lo) / h + 1e-9).floor() as usize;
            let mut v: Vec<f64> = (0..=steps).map(|k| lo + k as f64 * h).collect();
            if n - v[steps] > 1e-9 * h {
                v.push(n);
            } else {
                v[steps] = n;
            }
            v
        };
        Ok(Self { betas: ladder(-n), kappas: ladder((-n).max(-1.0)), resolution: h })
    }

    pub fn from_values(betas: Vec<f64>, kappas: Vec<f64>, n: f64) -> Result<Self> {
        if betas.is_empty() || kappas.is_empty() {
            return Err(Error::Config("control grid needs at least one β and one κ".into()));
        }
        if let Some(b) = betas.iter().find(|b| !(b.abs() <= n)) {
            return Err(Error::Config(format!("β = {b} outside [−{n}, {n}]")));
        }
        if let Some(k) = kappas.iter().find(|&&k| !(k >= (-n).max(-1.0) && k <= n)) {
            return Err(Error::Config(format!("κ = {k} outside [max(−1, −{n}), {n}]")));
        }
        let mut all: Vec<f64> = betas.iter().chain(&kappas).copied().collect();
        all.sort_by(f64::total_cmp);
        let resolution = all.windows(2).map(|w| w[1] - w[0]).filter(|d| *d > 0.0).fold(f64::INFINITY, f64::min);
        Ok(Self { betas, kappas, resolution })
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn kappas(&self) -> &[f64] {
        &self.kappas
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    fn len(&self) -> usize {
        self.betas.len() * self.kappas.len()
    }

    fn get(&self, idx: usize) -> (f64, f64) {
        (self.betas[idx / self.kappas.len()], self.kappas[idx % self.kappas.len()])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualConfig {
    /// Allowed excess of any dual value over the primal root.
    pub weak_tol: f64,
    /// Allowed shortfall of the best dual value below the primal root.
    pub attainment_tol: f64,
    pub random_controls: usize,
    pub seed: u64,
}

impl Default for DualConfig {
    fn default() -> Self {
        Self { weak_tol: 1e-8, attainment_tol: 0.05, random_controls: 64, seed: 0 }
    }
}

/// `(1 + κ) ln(1 + κ) − κ`, the convex conjugate of `eˣ − x − 1`.
fn conjugate_g(kappa: f64) -> f64 {
    if kappa <= -1.0 {
        1.0
    } else {
        (1.0 + kappa) * kappa.ln_1p() - kappa
    }
}

struct DualProblem<'a> {
    lattice: &'a Lattice,
    eta: Vec<f64>,
    running: Vec<f64>,
    discount: Vec<f64>,
}

impl DualProblem<'_> {
    /// One-step density `1 + βΔW + Σ_k κ (B_k − p_k)/(1 − p_k)` per branch,
    /// or `None` when it is negative on some branch.
    fn density(&self, i: usize, beta: f64, kappa: f64) -> Option<Vec<f64>> {
        let k = self.lattice.n_marks();
        let d: Vec<f64> = self
            .lattice
            .branches(i)
            .iter()
            .map(|br| {
                let jumps: f64 = (0..k)
                    .map(|m| {
                        let p = self.lattice.jump_prob(i, m);
                        if p <= 0.0 || p >= 1.0 {
                            0.0
                        } else {
                            kappa * (f64::from(u8::from(br.jumps(m))) - p) / (1.0 - p)
                        }
                    })
                    .sum();
                1.0 + beta * br.dw + jumps
            })
            .collect();
        d.iter().all(|x| *x >= 0.0).then_some(d)
    }

    /// `(½β² + Σ_k g*(κ) p_k/Δt) Δt`.
    fn penalty(&self, i: usize, beta: f64, kappa: f64) -> f64 {
        let dt = self.lattice.dt();
        let jumps: f64 = (0..self.lattice.n_marks())
            .map(|m| {
                let p = self.lattice.jump_prob(i, m);
                if p <= 0.0 || p >= 1.0 { 0.0 } else { conjugate_g(kappa) * p }
            })
            .sum();
        0.5 * beta * beta * dt + jumps
    }

    fn step_value(&self, i: usize, node: usize, density: &[f64], next: &[f64], pen: f64) -> f64 {
        let base = self.lattice.child_base(i, node);
        let e: f64 = self.lattice.branches(i).iter().zip(density).map(|(br, d)| br.prob * d * next[base + br.offset]).sum();
        (e + self.running[i] - pen) / self.discount[i]
    }

    /// Backward value of an adapted control `choice(i, node)`, an index into
    /// the admissible set of step `i`.
    fn value_of<F: FnMut(usize, usize) -> usize>(&self, admissible: &[Vec<(usize, Vec<f64>, f64)>], mut choice: F) -> f64 {
        let n = self.lattice.n_steps();
        let mut next = self.eta.clone();
        for i in (0..n).rev() {
            next = (0..self.lattice.n_nodes(i))
                .map(|node| {
                    let (_, d, pen) = &admissible[i][choice(i, node)];
                    self.step_value(i, node, d, &next, *pen)
                })
                .collect();
        }
        next[0]
    }
}

/// Dual representation of the truncated upper solution `Ȳⁿ` with terminal
/// `|η|` at δ = 1 on a one-dimensional lattice.
///
/// A control `(β, κ)` reweights each step by an admissible density `D` and
/// earns `J_i = (E[D J_{i+1}] + (l − ½β² − Σ g*(κ) p/Δt) Δt) / (1 − cΔt)`.
/// Every grid control must satisfy `J₀ ≤ Ȳⁿ₀ + weak_tol`, and the best
/// adapted grid control, found by dynamic programming, must reach
/// `Ȳⁿ₀ − attainment_tol`. Constant and random adapted controls are
/// evaluated as well, and the maximizing policy is re-evaluated forward
/// under its own measure.
pub fn check_dual_representation(
    gen: &Generator,
    terminal: &Terminal,
    lattice: &Lattice,
    controls: &ControlGrid,
    cfg: &DualConfig,
) -> Result<VerificationReport> {
    let GeneratorKind::TruncatedUpper(n) = *gen.kind() else {
        return Err(Error::Config("the dual check applies to a TruncatedUpper generator".into()));
    };
    let params = gen.params();
    if (params.delta() - 1.0).abs() > 0.0 {
        return Err(Error::Config(format!("the dual check needs δ = 1, got {}", params.delta())));
    }
    if controls.betas.iter().any(|b| b.abs() > n) || controls.kappas.iter().any(|k| *k > n || *k < (-n).max(-1.0)) {
        return Err(Error::Config(format!("controls exceed the truncation level n = {n}")));
    }
    let grid = *lattice.grid();
    let dt = grid.dt();
    let steps = grid.n_steps();
    let discount: Vec<f64> = (0..steps).map(|i| 1.0 - params.c(grid.t(i)) * dt).collect();
    if discount.iter().any(|x| *x <= 0.0) {
        return Err(Error::StepSize("c·Δt must be below 1 for the dual recursion".into()));
    }
    let abs_eta = terminal.clone().abs();
    let primal = solve_lattice(gen, &abs_eta, lattice, &LatticeSolverConfig::default())?;
    let problem = DualProblem {
        lattice,
        eta: lattice.node_values(steps, |s| abs_eta.eval(&[s.w], &s.counts)),
        running: (0..steps).map(|i| params.l(grid.t(i)) * dt).collect(),
        discount,
    };

    let admissible: Vec<Vec<(usize, Vec<f64>, f64)>> = (0..steps)
        .map(|i| {
            (0..controls.len())
                .filter_map(|c| {
                    let (b, k) = controls.get(c);
                    problem.density(i, b, k).map(|d| (c, d, problem.penalty(i, b, k)))
                })
                .collect()
        })
        .collect();
    if let Some(i) = admissible.iter().position(Vec::is_empty) {
        return Err(Error::Config(format!("no control in the grid gives a nonnegative density at step {i}")));
    }

    // Dynamic programming over adapted grid controls.
    let mut policy: Vec<Vec<usize>> = vec![Vec::new(); steps];
    let mut next = problem.eta.clone();
    for i in (0..steps).rev() {
        let (values, picks): (Vec<f64>, Vec<usize>) = (0..lattice.n_nodes(i))
            .map(|node| {
                admissible[i]
                    .iter()
                    .enumerate()
                    .map(|(a, (_, d, pen))| (problem.step_value(i, node, d, &next, *pen), a))
                    .fold((f64::NEG_INFINITY, 0), |best, cand| if cand.0 > best.0 { cand } else { best })
            })
            .unzip();
        policy[i] = picks;
        next = values;
    }
    let max_j = next[0];
    let replay = problem.value_of(&admissible, |i, node| policy[i][node]);

    let y_bar0 = primal.y0;
    let mut weak = ReportBuilder::new("weak_duality", cfg.weak_tol);
    weak.observe(max_j - y_bar0, || format!("best adapted control: J = {max_j} > Ȳ = {y_bar0}"));
    weak.observe((replay - max_j).abs(), || format!("policy replay {replay} differs from the dynamic program {max_j}"));

    let zero = controls.len();
    let mut zero_j = None;
    for c in 0..controls.len() {
        if (0..steps).any(|i| !admissible[i].iter().any(|a| a.0 == c)) {
            continue;
        }
        let j = problem.value_of(&admissible, |i, _| admissible[i].iter().position(|a| a.0 == c).unwrap());
        let (b, k) = controls.get(c);
        if b == 0.0 && k == 0.0 {
            zero_j = Some(j);
        }
        weak.observe(j - y_bar0, || format!("constant control β = {b}, κ = {k}: J = {j} > Ȳ = {y_bar0}"));
    }
    let _ = zero;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for r in 0..cfg.random_controls {
        let picks: Vec<Vec<usize>> = (0..steps)
            .map(|i| (0..lattice.n_nodes(i)).map(|_| rng.random_range(0..admissible[i].len())).collect())
            .collect();
        let j = problem.value_of(&admissible, |i, node| picks[i][node]);
        weak.observe(j - y_bar0, || format!("random control {r}: J = {j} > Ȳ = {y_bar0}"));
    }

    let mut attain = ReportBuilder::new("dual_attainment", cfg.attainment_tol);
    attain.observe(y_bar0 - max_j, || format!("best grid control reaches {max_j}, Ȳ = {y_bar0}"));

    // Zero control in closed form: E[e^{∫c}|η| + ∫ e^{∫c} l dt].
    let survival = lattice.node_probabilities();
    let (_, cum_c) = params.cumulative(&grid);
    let terminal_part: f64 = survival[steps].iter().zip(&problem.eta).map(|(p, v)| p * v).sum::<f64>() * cum_c[steps].exp();
    let running_part: f64 = (0..steps).map(|i| cum_c[i].exp() * problem.running[i]).sum();

    let mut report = VerificationReport::combine("dual_representation", &[weak.finish(), attain.finish()]);
    report.metrics = vec![
        ("y_bar0".into(), y_bar0),
        ("max_j".into(), max_j),
        ("gap".into(), y_bar0 - max_j),
        ("policy_replay_j".into(), replay),
        ("resolution".into(), controls.resolution()),
        ("zero_control_j".into(), zero_j.unwrap_or(f64::NAN)),
        ("zero_control_entropy_form".into(), terminal_part + running_part),
    ];
    Ok(report)
}
