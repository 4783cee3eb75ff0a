use super::{solve_lattice, BsdeSolution, LatticeSolverConfig, Storage, Terminal};
use crate::error::{Error, Result};
use crate::generators::{Generator, GeneratorKind, OracleGrid};
use crate::jump_model::Lattice;
use crate::verify::{ReportBuilder, VerificationReport};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LadderConfig {
    pub solver: LatticeSolverConfig,
    /// Search grid for ladders of custom generators.
    pub oracle: OracleGrid,
}

#[derive(Debug, Clone)]
pub struct LadderEntry {
    pub n: f64,
    pub m: f64,
    pub solution: BsdeSolution,
}

/// Solutions of the ladder `f̄ⁿ + f̲ᵐ` with terminal `η`, the envelopes
/// `(q̄ⁿ, |η|)` and `(q̲ᵐ, −|η|)`, and the node-wise ordering checks.
#[derive(Debug, Clone)]
pub struct LadderFamily {
    pub n_list: Vec<f64>,
    pub m_list: Vec<f64>,
    /// Row-major over `(n, m)` in the order of the sorted lists.
    pub entries: Vec<LadderEntry>,
    pub upper: Vec<BsdeSolution>,
    pub lower: Vec<BsdeSolution>,
    pub monotonicity: VerificationReport,
    pub sandwich: VerificationReport,
    /// `‖Y^{n',m'} − Y^{n,m}‖_∞` between consecutive schedule entries.
    pub cauchy_increments: Vec<f64>,
}

impl LadderFamily {
    pub fn entry(&self, n: f64, m: f64) -> Option<&BsdeSolution> {
        self.entries.iter().find(|e| e.n == n && e.m == m).map(|e| &e.solution)
    }

    /// Diagonal `(n_j, m_j)` pairs, truncated to the shorter list.
    pub fn schedule(&self) -> Vec<&LadderEntry> {
        self.n_list
            .iter()
            .zip(&self.m_list)
            .map(|(&n, &m)| self.entries.iter().find(|e| e.n == n && e.m == m).expect("entry exists"))
            .collect()
    }

    pub fn report(&self) -> VerificationReport {
        VerificationReport::combine("ladder", &[self.monotonicity.clone(), self.sandwich.clone()])
    }
}

/// Solves the ladder of `base` for every `(n, m)` and checks, node-wise,
/// `Y̲ᵐ ≤ Y^{n,m} ≤ Ȳⁿ` and `Y^{n',m} ≥ Y^{n,m} ≥ Y^{n,m'}` for `n' > n`, `m' > m`.
///
/// Closed-form ladders are checked at twice the Picard tolerance. Oracle
/// ladders carry the oracle resolution error integrated over the horizon.
pub fn solve_ladder(
    base: &Generator,
    terminal: &Terminal,
    lattice: &Lattice,
    n_list: &[f64],
    m_list: &[f64],
    cfg: &LadderConfig,
) -> Result<LadderFamily> {
    if n_list.is_empty() || m_list.is_empty() {
        return Err(Error::Config("ladder needs nonempty n and m lists".into()));
    }
    if matches!(base.kind(), GeneratorKind::Ladder { .. }) {
        return Err(Error::Config("the ladder base must not itself be a ladder".into()));
    }
    let sorted = |xs: &[f64]| {
        let mut v = xs.to_vec();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    };
    let (n_list, m_list) = (sorted(n_list), sorted(m_list));
    let solver = LatticeSolverConfig { storage: Storage::Full, ..cfg.solver };
    let abs_eta = terminal.clone().abs();
    let neg_abs_eta = terminal.clone().abs().scaled(-1.0);

    let mut entries = Vec::with_capacity(n_list.len() * m_list.len());
    for &n in &n_list {
        for &m in &m_list {
            let kind = GeneratorKind::Ladder { base: Box::new(base.kind().clone()), n, m, oracle: cfg.oracle };
            let gen = base.with_kind(kind)?;
            entries.push(LadderEntry { n, m, solution: solve_lattice(&gen, terminal, lattice, &solver)? });
        }
    }
    let upper = n_list
        .iter()
        .map(|&n| solve_lattice(&base.with_kind(GeneratorKind::TruncatedUpper(n))?, &abs_eta, lattice, &solver))
        .collect::<Result<Vec<_>>>()?;
    let lower = m_list
        .iter()
        .map(|&m| solve_lattice(&base.with_kind(GeneratorKind::TruncatedLower(m))?, &neg_abs_eta, lattice, &solver))
        .collect::<Result<Vec<_>>>()?;

    let uses_oracle = matches!(base.kind(), GeneratorKind::Custom(_));
    let oracle_slack = |n: f64, m: f64| {
        if !uses_oracle {
            return 0.0;
        }
        let model = base.model();
        let mass: f64 = model.mark_space().weights().iter().sum::<f64>() * model.xi_bound();
        let dims = (model.brownian_dim() + model.n_marks()) as f64;
        lattice.grid().horizon() * (n + m) * (1.0 + mass) * cfg.oracle.step * dims.sqrt()
    };
    let tol = 2.0 * solver.picard_tol;
    let idx = |a: usize, b: usize| a * m_list.len() + b;

    let mut mono = ReportBuilder::new("ladder_monotonicity", tol);
    let mut sand = ReportBuilder::new("ladder_sandwich", tol);
    let observe_layers = |report: &mut ReportBuilder, lo: &BsdeSolution, hi: &BsdeSolution, slack: f64, what: &str| {
        let (ll, lh) = (lo.layers().expect("full"), hi.layers().expect("full"));
        for (i, (a, b)) in ll.y.iter().zip(&lh.y).enumerate() {
            for (node, (&x, &y)) in a.iter().zip(b).enumerate() {
                let v = ((x - y - slack) / y.abs().max(1.0)).max(0.0);
                report.observe(v, || format!("{what} at t_{i} node {node}: {x} > {y}"));
            }
        }
    };

    for a in 0..n_list.len() {
        for b in 0..m_list.len() {
            let here = &entries[idx(a, b)];
            if a + 1 < n_list.len() {
                let there = &entries[idx(a + 1, b)];
                let slack = oracle_slack(here.n, here.m) + oracle_slack(there.n, there.m);
                let what = format!("Y^({},{}) > Y^({},{})", here.n, here.m, there.n, there.m);
                observe_layers(&mut mono, &here.solution, &there.solution, slack, &what);
            }
            if b + 1 < m_list.len() {
                let there = &entries[idx(a, b + 1)];
                let slack = oracle_slack(here.n, here.m) + oracle_slack(there.n, there.m);
                let what = format!("Y^({},{}) > Y^({},{})", there.n, there.m, here.n, here.m);
                observe_layers(&mut mono, &there.solution, &here.solution, slack, &what);
            }
            let slack = oracle_slack(here.n, here.m);
            let what = format!("Y^({},{}) above upper envelope", here.n, here.m);
            observe_layers(&mut sand, &here.solution, &upper[a], slack, &what);
            let what = format!("Y^({},{}) below lower envelope", here.n, here.m);
            observe_layers(&mut sand, &lower[b], &here.solution, slack, &what);
        }
    }
    let mut monotonicity = mono.finish();
    let mut sandwich = sand.finish();
    let max_slack = oracle_slack(*n_list.last().unwrap(), *m_list.last().unwrap());
    monotonicity.metrics.push(("oracle_slack".into(), max_slack));
    sandwich.metrics.push(("oracle_slack".into(), max_slack));

    let mut family = LadderFamily {
        n_list,
        m_list,
        entries,
        upper,
        lower,
        monotonicity,
        sandwich,
        cauchy_increments: Vec::new(),
    };
    let schedule = family.schedule();
    let increments = schedule
        .windows(2)
        .map(|w| sup_distance(&w[0].solution, &w[1].solution))
        .collect::<Result<Vec<_>>>()?;
    family.cauchy_increments = increments;
    Ok(family)
}

pub(crate) fn sup_distance(a: &BsdeSolution, b: &BsdeSolution) -> Result<f64> {
    let (la, lb) = (a.layers()?, b.layers()?);
    Ok(la
        .y
        .iter()
        .zip(&lb.y)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::generators::{CustomGenerator, StructureParams};
    use crate::jump_model::{JumpModel, MarkSpace, TimeGrid};

    fn jump_model() -> Arc<JumpModel> {
        Arc::new(JumpModel::with_constant_intensity(MarkSpace::new(vec![1.0], vec![1.0]).unwrap(), 1.0).unwrap())
    }

    #[test]
    fn canonical_ladder_is_monotone_and_sandwiched() {
        let model = jump_model();
        let lat = Lattice::build(&model, &TimeGrid::new(1.0, 20).unwrap(), 3, 1).unwrap();
        let base = Generator::new(GeneratorKind::Canonical, StructureParams::canonical(1.0).unwrap(), model).unwrap();
        let eta = Terminal::Affine { constant: 0.0, brownian: vec![1.5], counts: vec![0.8] };
        let fam = solve_ladder(&base, &eta, &lat, &[0.5, 1.0, 2.0], &[1.0, 2.0], &LadderConfig::default()).unwrap();
        assert_eq!(fam.entries.len(), 6);
        assert!(fam.monotonicity.passed, "{}", fam.monotonicity);
        let y: Vec<f64> = fam.n_list.iter().map(|&n| fam.entry(n, 1.0).unwrap().y0).collect();
        assert!(y[0] < y[1] && y[1] < y[2]);
        assert_eq!(fam.cauchy_increments.len(), 1);
    }

    #[test]
    fn lipschitz_nonnegative_generator_is_reproduced_exactly() {
        // f = 0.5|z| is already its own inf-convolution for n ≥ 0.5.
        let model = Arc::new(JumpModel::brownian(1).unwrap());
        let lat = Lattice::build(&model, &TimeGrid::new(1.0, 8).unwrap(), 2, 0).unwrap();
        let f = CustomGenerator::new("half_abs", |_, _, z: &[f64], _| 0.5 * z[0].abs());
        let params = StructureParams::constant(0.0, 0.0, 1.0).unwrap();
        let base = Generator::new(GeneratorKind::Custom(f), params, model).unwrap();
        let eta = Terminal::brownian().abs();
        let cfg = LadderConfig { oracle: OracleGrid { radius: 0.0, step: 0.05 }, ..Default::default() };
        let fam = solve_ladder(&base, &eta, &lat, &[1.0, 2.0], &[1.0, 2.0], &cfg).unwrap();
        let direct = solve_lattice(&base, &eta, &lat, &LatticeSolverConfig::default()).unwrap();
        for e in &fam.entries {
            assert!(sup_distance(&e.solution, &direct).unwrap() < 1e-9);
        }
        assert!(fam.cauchy_increments[0] < 1e-9);
    }

    #[test]
    fn ladder_below_threshold_is_rejected() {
        let model = jump_model();
        let lat = Lattice::build(&model, &TimeGrid::new(1.0, 4).unwrap(), 2, 1).unwrap();
        let params = StructureParams::constant(0.0, 2.0, 1.0).unwrap();
        let base = Generator::new(GeneratorKind::UpperBound, params, model).unwrap();
        let r = solve_ladder(&base, &Terminal::brownian(), &lat, &[1.0], &[3.0], &LadderConfig::default());
        assert!(matches!(r, Err(Error::Config(_))));
    }
}
