//! Experiment configuration.
//!
//! A config is a TOML file with the blocks `[model]`, `[grid]`, `[generator]`,
//! `[terminal]`, `[solver]` and `[verify]` plus the top-level `seed` and
//! `output_dir`. Every field has a documented default, so an empty file is a
//! valid config. Unknown keys are rejected.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use qexp_core::bsde::{LatticeSolverConfig, Storage, Terminal};
use qexp_core::entropic::BasisSpec;
use qexp_core::generators::{g, CustomGenerator, Generator, GeneratorKind, OracleGrid, Profile, StructureParams};
use qexp_core::jump_model::{Intensity, JumpModel, Lattice, MarkSpace, TimeGrid};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    pub model: ModelConfig,
    pub grid: GridConfig,
    pub generator: GeneratorConfig,
    pub terminal: TerminalConfig,
    pub solver: SolverConfig,
    pub verify: VerifyConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Brownian dimension.
    pub dim: usize,
    /// Mark locations.
    pub marks: Vec<f64>,
    /// Mark weights `λ_k`.
    pub weights: Vec<f64>,
    pub intensity: IntensityConfig,
    /// Bound on the intensity density; defaults to its largest value.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intensity_bound: Option<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { dim: 1, marks: Vec::new(), weights: Vec::new(), intensity: IntensityConfig::Constant { value: 1.0 }, intensity_bound: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum IntensityConfig {
    Constant { value: f64 },
    PerMark { values: Vec<f64> },
    /// `values[j]` applies from `times[j]` on.
    Piecewise { times: Vec<f64>, values: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub horizon: f64,
    pub steps: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { horizon: 1.0, steps: 50 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorName {
    Canonical,
    UpperBound,
    LowerBound,
    TruncatedUpper,
    TruncatedLower,
    Ladder,
    /// `f ≡ 0`.
    Zero,
    /// A bounded-slope custom generator inside the growth bounds.
    Oscillating,
    /// `q̄ + 1`, which breaks the upper growth bound.
    ShiftedUpper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProfileConfig {
    Constant(f64),
    Knots { times: Vec<f64>, values: Vec<f64> },
}

impl ProfileConfig {
    fn to_profile(&self) -> Profile {
        match self {
            ProfileConfig::Constant(v) => Profile::Constant(*v),
            ProfileConfig::Knots { times, values } => Profile::Knots { times: times.clone(), values: values.clone() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub kind: GeneratorName,
    pub delta: f64,
    pub l: ProfileConfig,
    pub c: ProfileConfig,
    /// Truncation level of `truncated_upper` and `truncated_lower`.
    pub level: f64,
    /// Base generator and levels of a `ladder`.
    pub ladder_base: GeneratorName,
    pub n: f64,
    pub m: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            kind: GeneratorName::Canonical,
            delta: 1.0,
            l: ProfileConfig::Constant(0.0),
            c: ProfileConfig::Constant(0.0),
            level: 2.0,
            ladder_base: GeneratorName::Canonical,
            n: 4.0,
            m: 4.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalName {
    /// `constant + brownian·W_T + counts·N_T`.
    Affine,
    /// Absolute value of the affine functional.
    Abs,
    /// Positive part of the affine functional.
    PositivePart,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TerminalConfig {
    pub kind: TerminalName,
    pub constant: f64,
    pub brownian: Vec<f64>,
    pub counts: Vec<f64>,
    pub scale: f64,
}

impl Default for TerminalConfig {
    fn default() -> Self {
        Self { kind: TerminalName::Affine, constant: 0.0, brownian: vec![1.0], counts: Vec::new(), scale: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendName {
    Lattice,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StorageName {
    Full,
    RootOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub backend: BackendName,
    /// Brownian moves per lattice step: 2 or 3.
    pub branching: usize,
    /// Jumps per mark and lattice step: 0 or 1.
    pub count_cap: u32,
    pub picard_tol: f64,
    pub max_iter: usize,
    pub storage: StorageName,
    /// Monte-Carlo paths for `simulate` and the regression solver.
    pub paths: usize,
    pub basis_degree: usize,
    pub ridge: f64,
    pub n_list: Vec<f64>,
    pub m_list: Vec<f64>,
    pub oracle_radius: f64,
    pub oracle_step: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let lattice = LatticeSolverConfig::default();
        let basis = BasisSpec::default();
        let oracle = OracleGrid::default();
        Self {
            backend: BackendName::Lattice,
            branching: 3,
            count_cap: 1,
            picard_tol: lattice.picard_tol,
            max_iter: lattice.max_iter,
            storage: StorageName::Full,
            paths: 10_000,
            basis_degree: basis.degree,
            ridge: basis.ridge,
            n_list: vec![1.0, 2.0, 4.0, 8.0, 16.0],
            m_list: vec![1.0, 2.0, 4.0, 8.0, 16.0],
            oracle_radius: oracle.radius,
            oracle_step: oracle.step,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckName {
    Structure,
    JumpInequality,
    Agamma,
    Comparison,
    Entropy,
    Submartingale,
    Doleans,
    Llogl,
    Ladder,
    Stability,
    Dual,
}

impl CheckName {
    pub const ALL: [CheckName; 11] = [
        CheckName::Structure,
        CheckName::JumpInequality,
        CheckName::Agamma,
        CheckName::Comparison,
        CheckName::Entropy,
        CheckName::Submartingale,
        CheckName::Doleans,
        CheckName::Llogl,
        CheckName::Ladder,
        CheckName::Stability,
        CheckName::Dual,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CheckName::Structure => "structure",
            CheckName::JumpInequality => "jump_inequality",
            CheckName::Agamma => "agamma",
            CheckName::Comparison => "comparison",
            CheckName::Entropy => "entropy",
            CheckName::Submartingale => "submartingale",
            CheckName::Doleans => "doleans",
            CheckName::Llogl => "llogl",
            CheckName::Ladder => "ladder",
            CheckName::Stability => "stability",
            CheckName::Dual => "dual",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub checks: Vec<CheckName>,
    /// Random `(t, y, z, u)` samples for generator checks.
    pub samples: usize,
    /// Simulated paths for the path checks.
    pub paths: usize,
    /// Constant integrands of the martingale in the path checks; empty means
    /// 0.5 per Brownian coordinate and 0.3 per mark.
    pub integrand_z: Vec<f64>,
    pub integrand_u: Vec<f64>,
    pub doleans_tol: f64,
    /// Tolerance of the lattice entropy and transform checks; defaults to
    /// `5Δt(1 + sup|f|)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lattice_tol: Option<f64>,
    /// Slope cap of the increment check for custom generators.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_cap: Option<f64>,
    pub stability_paths: usize,
    pub dual_level: f64,
    pub dual_steps: usize,
    pub dual_horizon: f64,
    pub dual_resolution: f64,
    pub dual_weak_tol: f64,
    pub dual_attainment_tol: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            checks: CheckName::ALL.to_vec(),
            samples: 10_000,
            paths: 1_000,
            integrand_z: Vec::new(),
            integrand_u: Vec::new(),
            doleans_tol: 1e-10,
            lattice_tol: None,
            gamma_cap: None,
            stability_paths: 2_000,
            dual_level: 2.0,
            dual_steps: 3,
            dual_horizon: 0.3,
            dual_resolution: 0.1,
            dual_weak_tol: 1e-8,
            dual_attainment_tol: 0.05,
        }
    }
}

fn field(name: &str) -> impl Fn(qexp_core::Error) -> CliError + '_ {
    move |e| CliError::Config(format!("{name}: {e}"))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Canonical serialization; hashing it identifies the experiment.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Builds every object once so that bad values surface before any work.
    pub fn validate(&self) -> Result<(), CliError> {
        let model = self.model()?;
        let grid = self.time_grid()?;
        model.validate_on(&grid).map_err(field("model"))?;
        self.generator(model.clone())?;
        self.terminal().validate(model.brownian_dim(), model.n_marks()).map_err(field("terminal"))?;
        if !matches!(self.solver.branching, 2 | 3) {
            return Err(CliError::Config(format!("solver.branching: must be 2 or 3, got {}", self.solver.branching)));
        }
        if self.solver.count_cap > 1 {
            return Err(CliError::Config(format!("solver.count_cap: must be 0 or 1, got {}", self.solver.count_cap)));
        }
        if !(self.solver.picard_tol > 0.0) || self.solver.max_iter == 0 {
            return Err(CliError::Config("solver.picard_tol and solver.max_iter must be positive".into()));
        }
        if self.solver.paths == 0 || self.verify.paths == 0 || self.verify.samples == 0 {
            return Err(CliError::Config("solver.paths, verify.paths and verify.samples must be positive".into()));
        }
        if self.solver.n_list.is_empty() || self.solver.m_list.is_empty() {
            return Err(CliError::Config("solver.n_list and solver.m_list must be nonempty".into()));
        }
        self.oracle().validate().map_err(field("solver.oracle"))?;
        let (d, k) = (model.brownian_dim(), model.n_marks());
        let (z, u) = (&self.verify.integrand_z, &self.verify.integrand_u);
        if !(z.is_empty() || z.len() == d) || !(u.is_empty() || u.len() == k) {
            return Err(CliError::Config(format!(
                "verify.integrand_z needs {d} entries and verify.integrand_u needs {k} entries (or none)"
            )));
        }
        Ok(())
    }

    /// Integrands of the path checks with the defaults filled in.
    pub fn integrands(&self, dim: usize, n_marks: usize) -> (Vec<f64>, Vec<f64>) {
        let fill = |v: &Vec<f64>, n: usize, x: f64| if v.is_empty() { vec![x; n] } else { v.clone() };
        (fill(&self.verify.integrand_z, dim, 0.5), fill(&self.verify.integrand_u, n_marks, 0.3))
    }

    pub fn model(&self) -> Result<Arc<JumpModel>, CliError> {
        let m = &self.model;
        let marks = if m.marks.is_empty() && m.weights.is_empty() {
            MarkSpace::empty()
        } else {
            MarkSpace::new(m.marks.clone(), m.weights.clone()).map_err(field("model"))?
        };
        let (intensity, largest) = match &m.intensity {
            IntensityConfig::Constant { value } => (Intensity::Constant(*value), *value),
            IntensityConfig::PerMark { values } => {
                (Intensity::PerMark(values.clone()), values.iter().copied().fold(0.0, f64::max))
            }
            IntensityConfig::Piecewise { times, values } => (
                Intensity::Piecewise { times: times.clone(), values: values.clone() },
                values.iter().flatten().copied().fold(0.0, f64::max),
            ),
        };
        let bound = m.intensity_bound.unwrap_or(largest);
        Ok(Arc::new(JumpModel::new(marks, intensity, bound, m.dim).map_err(field("model"))?))
    }

    pub fn time_grid(&self) -> Result<TimeGrid, CliError> {
        TimeGrid::new(self.grid.horizon, self.grid.steps).map_err(field("grid"))
    }

    pub fn params(&self) -> Result<StructureParams, CliError> {
        let g = &self.generator;
        StructureParams::new(g.l.to_profile(), g.c.to_profile(), g.delta).map_err(field("generator"))
    }

    pub fn oracle(&self) -> OracleGrid {
        OracleGrid { radius: self.solver.oracle_radius, step: self.solver.oracle_step }
    }

    fn kind_of(&self, name: GeneratorName, params: &StructureParams) -> Result<GeneratorKind, CliError> {
        let cfg = &self.generator;
        Ok(match name {
            GeneratorName::Canonical => GeneratorKind::Canonical,
            GeneratorName::UpperBound => GeneratorKind::UpperBound,
            GeneratorName::LowerBound => GeneratorKind::LowerBound,
            GeneratorName::TruncatedUpper => GeneratorKind::TruncatedUpper(cfg.level),
            GeneratorName::TruncatedLower => GeneratorKind::TruncatedLower(cfg.level),
            GeneratorName::Ladder => {
                if cfg.ladder_base == GeneratorName::Ladder {
                    return Err(CliError::Config("generator.ladder_base: must not be a ladder".into()));
                }
                GeneratorKind::Ladder { base: Box::new(self.kind_of(cfg.ladder_base, params)?), n: cfg.n, m: cfg.m, oracle: self.oracle() }
            }
            GeneratorName::Zero => GeneratorKind::Custom(CustomGenerator::new("zero", |_, _, _, _| 0.0)),
            GeneratorName::Oscillating => {
                let p = params.clone();
                let model = self.model()?;
                let d = p.delta();
                GeneratorKind::Custom(CustomGenerator::new("oscillating", move |t, y, z: &[f64], u: &[f64]| {
                    let quad: f64 = z.iter().map(|x| 0.5 * d * x * x * x.sin()).sum();
                    let jumps: f64 =
                        u.iter().enumerate().map(|(k, &x)| 0.25 * (g(d * x) - g(-d * x)) / d * model.rate(t, k)).sum();
                    0.5 * p.c(t) * y * y.cos() + 0.5 * p.l(t) * (3.0 * z[0]).cos() + quad + jumps
                }))
            }
            GeneratorName::ShiftedUpper => {
                let upper = Generator::new(GeneratorKind::UpperBound, params.clone(), self.model()?).map_err(field("generator"))?;
                GeneratorKind::Custom(CustomGenerator::new("shifted_upper", move |t, y, z, u| upper.eval(t, y, z, u) + 1.0))
            }
        })
    }

    pub fn generator(&self, model: Arc<JumpModel>) -> Result<Generator, CliError> {
        let params = self.params()?;
        let kind = self.kind_of(self.generator.kind, &params)?;
        Generator::new(kind, params, model).map_err(field("generator"))
    }

    pub fn terminal(&self) -> Terminal {
        let t = &self.terminal;
        let affine = Terminal::Affine { constant: t.constant, brownian: t.brownian.clone(), counts: t.counts.clone() };
        let shaped = match t.kind {
            TerminalName::Affine => affine,
            TerminalName::Abs => affine.abs(),
            TerminalName::PositivePart => {
                let inner = affine;
                Terminal::custom("positive_part", move |w, n| inner.eval(w, n).max(0.0))
            }
        };
        if t.scale == 1.0 { shaped } else { shaped.scaled(t.scale) }
    }

    pub fn lattice(&self, model: &JumpModel) -> Result<Lattice, CliError> {
        Lattice::build(model, &self.time_grid()?, self.solver.branching, self.solver.count_cap).map_err(field("solver"))
    }

    pub fn lattice_solver(&self) -> LatticeSolverConfig {
        LatticeSolverConfig { picard_tol: self.solver.picard_tol, max_iter: self.solver.max_iter, storage: self.storage() }
    }

    pub fn storage(&self) -> Storage {
        match self.solver.storage {
            StorageName::Full => Storage::Full,
            StorageName::RootOnly => Storage::RootOnly,
        }
    }

    pub fn basis(&self) -> BasisSpec {
        BasisSpec { degree: self.solver.basis_degree, ridge: self.solver.ridge }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default_config() {
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let err = ExperimentConfig::from_toml("[grid]\nhorizon = 1.0\nstpes = 4\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("stpes") && msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn invalid_values_name_their_block() {
        let err = ExperimentConfig::from_toml("[model]\nmarks = [1.0]\nweights = [-1.0]\n").unwrap_err();
        assert!(err.to_string().contains("model"), "{err}");
        let err = ExperimentConfig::from_toml("[solver]\nbranching = 5\n").unwrap_err();
        assert!(err.to_string().contains("solver.branching"), "{err}");
    }

    #[test]
    fn piecewise_intensity_and_knot_profiles_parse() {
        let text = r#"
            [model]
            marks = [1.0, -0.5]
            weights = [0.5, 0.5]
            intensity = { kind = "piecewise", times = [0.0, 0.5], values = [[1.0, 1.0], [2.0, 0.5]] }
            [generator]
            kind = "truncated_upper"
            l = { times = [0.0, 1.0], values = [0.1, 0.2] }
            c = 0.3
            [terminal]
            kind = "abs"
            counts = [1.0, 0.0]
            [verify]
            integrand_u = [0.1, 0.2]
        "#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(cfg.model().unwrap().xi_bound(), 2.0);
        assert!((cfg.params().unwrap().l(0.5) - 0.15).abs() < 1e-15);
    }

    #[test]
    fn shifted_upper_exceeds_the_growth_bound_by_one() {
        let cfg = ExperimentConfig::from_toml("[generator]\nkind = \"shifted_upper\"\nl = 0.1\n").unwrap();
        let model = cfg.model().unwrap();
        let gen = cfg.generator(model.clone()).unwrap();
        let upper = gen.with_kind(GeneratorKind::UpperBound).unwrap();
        assert_eq!(gen.eval(0.0, 0.3, &[0.2], &[]), upper.eval(0.0, 0.3, &[0.2], &[]) + 1.0);
    }
}
