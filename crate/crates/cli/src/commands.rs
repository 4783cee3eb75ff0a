//! The `simulate`, `solve`, `ladder`, `verify` and `report` commands.

use std::fs;
use std::path::Path;

use qexp_core::bsde::{
    compare, solve_ladder, solve_lattice, solve_mc, BsdeSolution, LadderConfig, LadderFamily, McSolverConfig, Storage,
};
use qexp_core::entropic::{entropy_bound, ConditionalBackend};
use qexp_core::generators::{check_structure, Generator, GeneratorKind, SampleSpec};
use qexp_core::jump_model::{simulate_paths, Lattice, PathBundle, TimeGrid};
use qexp_core::numeric::{mean, mean_and_se};
use qexp_core::verify::{
    check_agamma_increment, check_doleans, check_dual_representation, check_entropy_inequality,
    check_exp_submartingale, check_jump_inequality, check_llogl, stability_diagnostics, ControlGrid, DualConfig,
    ExpClass, MartingaleSpec, StabilityConfig, VerificationReport,
};

use crate::config::{BackendName, CheckName, ExperimentConfig};
use crate::error::CliError;
use crate::store::{manifest_path, num, read_manifest, sha256_hex, temp_sibling, Csv, OutputSet};

/// What a command reports back to the driver.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    /// `false` when a check or a consistency flag failed.
    pub passed: bool,
    pub lines: Vec<String>,
}

fn flag(ok: bool) -> String {
    if ok { "1" } else { "0" }.to_string()
}

/// Simulates the path bundle, persists it as `paths.bin` and writes sample
/// moments against their exact values to `simulate_summary.csv`.
pub fn simulate(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, CliError> {
    let model = cfg.model()?;
    let grid = cfg.time_grid()?;
    let paths = simulate_paths(&model, &grid, cfg.solver.paths, cfg.seed)?;
    let mut set = OutputSet::new(out, "simulate", &cfg.to_toml())?;

    let target = set.dir().join("paths.bin");
    let tmp = temp_sibling(&target);
    paths.write_to(&tmp)?;
    fs::rename(&tmp, &target).map_err(|e| CliError::io(&target, e))?;
    set.record("paths.bin")?;

    let mut csv = Csv::new(&["quantity", "estimate", "expected", "standard_error", "z_score"]);
    let mut lines = Vec::new();
    let (n, np) = (grid.n_steps(), paths.n_paths());
    let mut push = |name: String, samples: Vec<f64>, expected: f64| {
        let (m, se) = mean_and_se(&samples);
        let z = if se > 0.0 { (m - expected) / se } else if m == expected { 0.0 } else { f64::INFINITY };
        lines.push(format!("{name}: {m:.6} (expected {expected:.6}, z = {z:.2})"));
        csv.row(vec![name, num(m), num(expected), num(se), num(z)]);
    };
    for j in 0..paths.dim() {
        let w: Vec<f64> = (0..np).map(|p| (0..n).map(|i| paths.dw(p, i, j)).sum()).collect();
        push(format!("W{j}_T"), w.clone(), 0.0);
        push(format!("W{j}_T^2"), w.iter().map(|x| x * x).collect(), grid.horizon());
    }
    for k in 0..paths.n_marks() {
        let counts: Vec<f64> = (0..np).map(|p| (0..n).map(|i| f64::from(paths.jump(p, i, k))).sum()).collect();
        let expected: f64 = (0..n).map(|i| model.step_mean(&grid, i, k)).sum();
        push(format!("N{k}_T"), counts, expected);
    }
    set.write("simulate_summary.csv", csv.render().as_bytes())?;
    set.finish()?;
    Ok(Outcome { passed: true, lines })
}

fn solve_configured(cfg: &ExperimentConfig, gen: &Generator, storage: Storage) -> Result<(BsdeSolution, Option<Lattice>), CliError> {
    let terminal = cfg.terminal();
    match cfg.solver.backend {
        BackendName::Lattice => {
            let lattice = cfg.lattice(gen.model())?;
            let solver = qexp_core::bsde::LatticeSolverConfig { storage, ..cfg.lattice_solver() };
            Ok((solve_lattice(gen, &terminal, &lattice, &solver)?, Some(lattice)))
        }
        BackendName::MonteCarlo => {
            let paths = simulate_paths(gen.model(), &cfg.time_grid()?, cfg.solver.paths, cfg.seed)?;
            Ok((solve_mc(gen, &terminal, &paths, &McSolverConfig { basis: cfg.basis(), storage, ..Default::default() })?, None))
        }
    }
}

/// Solves the configured BSDE; writes `solution_summary.csv` and, with full
/// storage, per-time layer statistics to `solution_layers.csv`.
pub fn solve(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, CliError> {
    let model = cfg.model()?;
    let gen = cfg.generator(model)?;
    let (sol, lattice) = solve_configured(cfg, &gen, cfg.storage())?;
    let mut set = OutputSet::new(out, "solve", &cfg.to_toml())?;

    let mut summary = Csv::new(&["key", "value"]);
    let mut entries: Vec<(String, f64)> = vec![
        ("y0".into(), sol.y0),
        ("y0_standard_error".into(), sol.y0_standard_error.unwrap_or(f64::NAN)),
    ];
    entries.extend(sol.z0.iter().enumerate().map(|(j, v)| (format!("z0_{j}"), *v)));
    entries.extend(sol.u0.iter().enumerate().map(|(k, v)| (format!("u0_{k}"), *v)));
    entries.extend([
        ("z_energy".into(), sol.moments.z_energy),
        ("u_energy".into(), sol.moments.u_energy),
        ("v_variation".into(), sol.moments.v_variation),
        ("max_picard_iterations".into(), sol.diagnostics.max_picard_iterations as f64),
        ("max_picard_residual".into(), sol.diagnostics.max_picard_residual),
        ("sup_abs_generator".into(), sol.diagnostics.sup_abs_generator),
    ]);
    for (k, v) in &entries {
        summary.row(vec![k.clone(), num(*v)]);
    }
    set.write("solution_summary.csv", summary.render().as_bytes())?;

    if let Ok(layers) = sol.layers() {
        let weights = lattice.as_ref().map(Lattice::node_probabilities);
        let mut csv = Csv::new(&["step", "t", "y_mean", "y_min", "y_max", "v_incr_mean"]);
        for (i, y) in layers.y.iter().enumerate() {
            let avg = |xs: &[f64]| match &weights {
                Some(w) => w[i].iter().zip(xs).map(|(p, x)| p * x).sum(),
                None => mean(xs),
            };
            let v = layers.v_incr.get(i).map_or(0.0, |v| avg(v));
            let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            csv.row(vec![i.to_string(), num(sol.grid.t(i)), num(avg(y)), num(lo), num(hi), num(v)]);
        }
        set.write("solution_layers.csv", csv.render().as_bytes())?;
    }
    set.finish()?;
    let se = sol.y0_standard_error.map(|s| format!(" ± {s:.3e}")).unwrap_or_default();
    Ok(Outcome { passed: true, lines: vec![format!("{}: Y0 = {:.10}{se}", sol.generator, sol.y0)] })
}

fn ladder_base(gen: &Generator) -> Result<Generator, CliError> {
    match gen.kind() {
        GeneratorKind::Ladder { base, .. } => Ok(gen.with_kind(base.as_ref().clone())?),
        _ => Ok(gen.clone()),
    }
}

fn solve_family(cfg: &ExperimentConfig, gen: &Generator, lattice: &Lattice) -> Result<LadderFamily, CliError> {
    let lc = LadderConfig { solver: cfg.lattice_solver(), oracle: cfg.oracle() };
    Ok(solve_ladder(&ladder_base(gen)?, &cfg.terminal(), lattice, &cfg.solver.n_list, &cfg.solver.m_list, &lc)?)
}

/// Relative excess `(|Y| − B)/max(1, B)` of a solution over the entropy bound.
fn entropy_excess(sol: &BsdeSolution, bound: &[Vec<f64>]) -> Result<f64, CliError> {
    let y = &sol.layers()?.y;
    Ok(y.iter()
        .zip(bound)
        .flat_map(|(a, b)| a.iter().zip(b).map(|(v, b)| (v.abs() - b) / b.abs().max(1.0)))
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Solves the approximation ladder and writes `ladder.csv` with one row per
/// `(n, m)`: root values, Cauchy gaps along the diagonal schedule, and the
/// monotonicity, sandwich and entropy-bound flags.
pub fn ladder(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, CliError> {
    let model = cfg.model()?;
    let gen = cfg.generator(model.clone())?;
    let lattice = cfg.lattice(&model)?;
    let family = solve_family(cfg, &gen, &lattice)?;
    let n = lattice.n_steps();
    let terminal = cfg.terminal();
    let eta = lattice.node_values(n, |s| terminal.eval(&[s.w], &s.counts));
    let bound = entropy_bound(&ConditionalBackend::LatticeExact(&lattice), &eta, &cfg.params()?)?.values;
    let tol = 2.0 * cfg.solver.picard_tol;
    let sup_f = family.entries.iter().map(|e| e.solution.diagnostics.sup_abs_generator).fold(0.0, f64::max);
    let bound_tol = 5.0 * lattice.grid().dt() * (1.0 + sup_f);

    let (nl, ml) = (&family.n_list, &family.m_list);
    let mut csv = Csv::new(&[
        "n", "m", "y0", "upper_y0", "lower_y0", "sup_gap", "monotone", "sandwich", "entropy_excess", "entropy_bounded",
    ]);
    let mut all_ok = true;
    let mut lines = Vec::new();
    for (a, &nv) in nl.iter().enumerate() {
        for (b, &mv) in ml.iter().enumerate() {
            let here = family.entry(nv, mv).expect("entry");
            let mut monotone = true;
            if let Some(&n2) = nl.get(a + 1) {
                monotone &= compare(here, family.entry(n2, mv).expect("entry"), tol)?.passed;
            }
            if let Some(&m2) = ml.get(b + 1) {
                monotone &= compare(family.entry(nv, m2).expect("entry"), here, tol)?.passed;
            }
            let sandwich = compare(here, &family.upper[a], tol)?.passed && compare(&family.lower[b], here, tol)?.passed;
            let excess = entropy_excess(here, &bound)?;
            let bounded = excess <= bound_tol;
            let gap = if a == b && a > 0 { family.cauchy_increments[a - 1] } else { f64::NAN };
            all_ok &= monotone && sandwich && bounded;
            csv.row(vec![
                num(nv),
                num(mv),
                num(here.y0),
                num(family.upper[a].y0),
                num(family.lower[b].y0),
                num(gap),
                flag(monotone),
                flag(sandwich),
                num(excess),
                flag(bounded),
            ]);
            if a == b {
                lines.push(format!("n = m = {nv}: Y0 = {:.10}, gap = {gap:.3e}", here.y0));
            }
        }
    }
    let mut set = OutputSet::new(out, "ladder", &cfg.to_toml())?;
    set.write("ladder.csv", csv.render().as_bytes())?;
    set.finish()?;
    lines.push(format!("ladder flags {}", if all_ok { "all pass" } else { "FAIL" }));
    Ok(Outcome { passed: all_ok, lines })
}

/// Lazily built objects shared between checks.
struct Workspace<'a> {
    cfg: &'a ExperimentConfig,
    gen: Generator,
    lattice: Option<Lattice>,
    solution: Option<BsdeSolution>,
    family: Option<LadderFamily>,
    paths: Option<PathBundle>,
}

impl Workspace<'_> {
    fn lattice(&mut self) -> Result<&Lattice, CliError> {
        if self.lattice.is_none() {
            self.lattice = Some(self.cfg.lattice(self.gen.model())?);
        }
        Ok(self.lattice.as_ref().expect("built"))
    }

    fn solution(&mut self) -> Result<&BsdeSolution, CliError> {
        if self.solution.is_none() {
            let lattice = self.lattice()?.clone();
            let solver = qexp_core::bsde::LatticeSolverConfig { storage: Storage::Full, ..self.cfg.lattice_solver() };
            self.solution = Some(solve_lattice(&self.gen, &self.cfg.terminal(), &lattice, &solver)?);
        }
        Ok(self.solution.as_ref().expect("built"))
    }

    fn family(&mut self) -> Result<&LadderFamily, CliError> {
        if self.family.is_none() {
            let lattice = self.lattice()?.clone();
            self.family = Some(solve_family(self.cfg, &self.gen, &lattice)?);
        }
        Ok(self.family.as_ref().expect("built"))
    }

    fn paths(&mut self) -> Result<&PathBundle, CliError> {
        if self.paths.is_none() {
            let grid = self.cfg.time_grid()?;
            self.paths = Some(simulate_paths(self.gen.model(), &grid, self.cfg.verify.paths, self.cfg.seed)?);
        }
        Ok(self.paths.as_ref().expect("built"))
    }

    fn lattice_tolerance(&mut self) -> Result<f64, CliError> {
        if let Some(t) = self.cfg.verify.lattice_tol {
            return Ok(t);
        }
        let dt = self.cfg.time_grid()?.dt();
        let sup_f = self.solution()?.diagnostics.sup_abs_generator;
        Ok(5.0 * dt * (1.0 + sup_f))
    }

    fn run(&mut self, check: CheckName) -> Result<VerificationReport, CliError> {
        let cfg = self.cfg;
        let v = &cfg.verify;
        let spec = SampleSpec { n_samples: v.samples, seed: cfg.seed, ..SampleSpec::default() };
        let params = cfg.params()?;
        let model = self.gen.model().clone();
        Ok(match check {
            CheckName::Structure => check_structure(&self.gen, &spec),
            CheckName::JumpInequality => check_jump_inequality(&model, &spec),
            CheckName::Agamma => check_agamma_increment(&self.gen, &spec, v.gamma_cap)?,
            CheckName::Comparison => {
                let lattice = self.lattice()?.clone();
                let terminal = cfg.terminal();
                let solver = qexp_core::bsde::LatticeSolverConfig { storage: Storage::Full, ..cfg.lattice_solver() };
                let lower = solve_lattice(&self.gen.with_kind(GeneratorKind::LowerBound)?, &terminal, &lattice, &solver)?;
                let upper = solve_lattice(&self.gen.with_kind(GeneratorKind::UpperBound)?, &terminal, &lattice, &solver)?;
                let tol = 2.0 * cfg.solver.picard_tol;
                let sol = self.solution()?;
                let below = compare(&lower, sol, tol)?;
                let above = compare(sol, &upper, tol)?;
                VerificationReport::combine("comparison", &[below, above])
            }
            CheckName::Entropy => {
                let tol = self.lattice_tolerance()?;
                let y = self.solution()?.layers()?.y.clone();
                check_entropy_inequality(&y, self.lattice()?, &params, tol)?
            }
            CheckName::Submartingale => {
                let tol = self.lattice_tolerance()?;
                let y = self.solution()?.layers()?.y.clone();
                check_exp_submartingale(&y, self.lattice()?, ExpClass::Structured(&params), tol)?
            }
            CheckName::Doleans => {
                let (z, u) = cfg.integrands(model.brownian_dim(), model.n_marks());
                let spec = MartingaleSpec::constant(z, u);
                check_doleans(self.paths()?, &model, &spec, v.doleans_tol)?
            }
            CheckName::Llogl => {
                let (z, u) = cfg.integrands(model.brownian_dim(), model.n_marks());
                let spec = MartingaleSpec::constant(z, u);
                check_llogl(self.paths()?, &model, &spec)?
            }
            CheckName::Ladder => self.family()?.report(),
            CheckName::Stability => {
                let lattice = self.lattice()?.clone();
                let family = self.family()?;
                let sc = StabilityConfig { n_paths: v.stability_paths, seed: cfg.seed, ..StabilityConfig::default() };
                stability_diagnostics(family, &lattice, &cfg.terminal(), &params, &sc)?
            }
            CheckName::Dual => {
                let grid = TimeGrid::new(v.dual_horizon, v.dual_steps)?;
                let lattice = Lattice::build(&model, &grid, 2, cfg.solver.count_cap)?;
                let gen = self.gen.with_kind(GeneratorKind::TruncatedUpper(v.dual_level))?;
                let controls = ControlGrid::uniform(v.dual_level, v.dual_resolution)?;
                let dc = DualConfig {
                    weak_tol: v.dual_weak_tol,
                    attainment_tol: v.dual_attainment_tol,
                    seed: cfg.seed,
                    ..DualConfig::default()
                };
                check_dual_representation(&gen, &cfg.terminal(), &lattice, &controls, &dc)?
            }
        })
    }
}

/// Runs the enabled checks and writes one row per check to `report.csv` and
/// their metrics to `metrics.csv`. A check that cannot run is a failing row
/// whose witness is the error.
pub fn verify(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, CliError> {
    let model = cfg.model()?;
    let mut ws = Workspace { cfg, gen: cfg.generator(model)?, lattice: None, solution: None, family: None, paths: None };
    let mut report = Csv::new(&["check", "property", "passed", "max_violation", "tolerance", "samples", "witness"]);
    let mut metrics = Csv::new(&["check", "metric", "value"]);
    let mut all = true;
    let mut lines = Vec::new();
    for &check in &cfg.verify.checks {
        let name = check.as_str();
        match ws.run(check) {
            Ok(r) => {
                all &= r.passed;
                lines.push(format!("{name}: {r}"));
                report.row(vec![
                    name.into(),
                    r.property.clone(),
                    flag(r.passed),
                    num(r.max_violation),
                    num(r.tolerance),
                    r.samples.to_string(),
                    r.witness.clone().unwrap_or_default(),
                ]);
                for (k, v) in &r.metrics {
                    metrics.row(vec![name.into(), k.clone(), num(*v)]);
                }
            }
            Err(e) => {
                all = false;
                lines.push(format!("{name}: ERROR {e}"));
                report.row(vec![name.into(), name.into(), flag(false), num(f64::NAN), num(f64::NAN), "0".into(), e.to_string()]);
            }
        }
    }
    let mut set = OutputSet::new(out, "verify", &cfg.to_toml())?;
    set.write("report.csv", report.render().as_bytes())?;
    set.write("metrics.csv", metrics.render().as_bytes())?;
    set.finish()?;
    Ok(Outcome { passed: all, lines })
}

/// Re-hashes every output listed in the manifests of `out` and summarizes
/// `report.csv` when present.
pub fn report(out: &Path) -> Result<Outcome, CliError> {
    let mut lines = Vec::new();
    let mut ok = true;
    let mut found = false;
    for command in ["simulate", "solve", "ladder", "verify"] {
        let path = manifest_path(out, command);
        if !path.exists() {
            continue;
        }
        found = true;
        let manifest = read_manifest(&path)?;
        for rec in &manifest.outputs {
            let file = out.join(&rec.path);
            let status = match fs::read(&file) {
                Ok(bytes) if sha256_hex(&bytes) == rec.sha256 => "ok",
                Ok(_) => "checksum mismatch",
                Err(_) => "missing",
            };
            ok &= status == "ok";
            lines.push(format!("{command}: {} {status}", rec.path));
        }
    }
    if !found {
        return Err(CliError::Config(format!("no manifests found in {}", out.display())));
    }
    let report_csv = out.join("report.csv");
    if let Ok(text) = fs::read_to_string(&report_csv) {
        let rows: Vec<&str> = text.lines().skip(1).collect();
        let failed = rows.iter().filter(|r| r.split(',').nth(2) == Some("0")).count();
        ok &= failed == 0;
        lines.push(format!("verify: {} checks, {failed} failed", rows.len()));
    }
    Ok(Outcome { passed: ok, lines })
}
