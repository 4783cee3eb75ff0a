//! Generators `f(t, y, z, u)` of quadratic-exponential BSDEs.
//!
//! `j_t(u) = Σ_k g(u_k) ξ(t,x_k) λ_k` with `g(x) = eˣ − x − 1` plays for the
//! jump part the role `½|z|²` plays for the Brownian part.

mod oracle;
mod structure;
mod truncation;

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::jump_model::{JumpModel, TimeGrid};

pub use oracle::{infconv_oracle, supconv_oracle, OracleGrid};
pub use structure::{check_structure, Sample, SampleSpec};
pub use truncation::{gamma_n, huber, truncated_g, truncated_g_slope};

/// `g(x) = eˣ − x − 1`, evaluated without cancellation near 0.
pub fn g(x: f64) -> f64 {
    x.exp_m1() - x
}

/// `Σ_k g(scale · u_k) ξ(t, x_k) λ_k`.
pub fn j_value(model: &JumpModel, t: f64, u: &[f64], scale: f64) -> f64 {
    u.iter().enumerate().map(|(k, &uk)| g(scale * uk) * model.rate(t, k)).sum()
}

/// A nonnegative deterministic function of time.
#[derive(Debug, Clone, PartialEq)]
pub enum Profile {
    Constant(f64),
    /// Linear interpolation between knots, flat outside.
    Knots { times: Vec<f64>, values: Vec<f64> },
}

impl Profile {
    pub fn at(&self, t: f64) -> f64 {
        match self {
            Profile::Constant(v) => *v,
            Profile::Knots { times, values } => {
                let j = times.partition_point(|&s| s <= t);
                if j == 0 {
                    values[0]
                } else if j == times.len() {
                    values[j - 1]
                } else {
                    let (t0, t1) = (times[j - 1], times[j]);
                    let w = (t - t0) / (t1 - t0);
                    values[j - 1] * (1.0 - w) + values[j] * w
                }
            }
        }
    }

    pub fn sup(&self) -> f64 {
        match self {
            Profile::Constant(v) => *v,
            Profile::Knots { values, .. } => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        let values: &[f64] = match self {
            Profile::Constant(v) => std::slice::from_ref(v),
            Profile::Knots { times, values } => {
                if times.is_empty() || times.len() != values.len() {
                    return Err(Error::Config(format!("{name}: need one value per knot")));
                }
                if times.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::Config(format!("{name}: knots must increase strictly")));
                }
                values
            }
        };
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config(format!("{name} must be finite and nonnegative")));
        }
        Ok(())
    }
}

/// Coefficients `(l, c, δ)` of the structure condition.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureParams {
    l: Profile,
    c: Profile,
    delta: f64,
}

impl StructureParams {
    pub fn new(l: Profile, c: Profile, delta: f64) -> Result<Self> {
        l.validate("l")?;
        c.validate("c")?;
        if !(delta.is_finite() && delta > 0.0) {
            return Err(Error::Config(format!("δ must be positive, got {delta}")));
        }
        Ok(Self { l, c, delta })
    }

    pub fn constant(l: f64, c: f64, delta: f64) -> Result<Self> {
        Self::new(Profile::Constant(l), Profile::Constant(c), delta)
    }

    /// `l = c = 0`.
    pub fn canonical(delta: f64) -> Result<Self> {
        Self::constant(0.0, 0.0, delta)
    }

    pub fn l(&self, t: f64) -> f64 {
        self.l.at(t)
    }

    pub fn c(&self, t: f64) -> f64 {
        self.c.at(t)
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// `c* = sup_t c_t`.
    pub fn c_star(&self) -> f64 {
        self.c.sup()
    }

    pub fn l_profile(&self) -> &Profile {
        &self.l
    }

    pub fn c_profile(&self) -> &Profile {
        &self.c
    }

    /// `(Λ_{t_i}, C_{t_i})` for `i = 0..=N`, trapezoidal rule.
    pub fn cumulative(&self, grid: &TimeGrid) -> (Vec<f64>, Vec<f64>) {
        let dt = grid.dt();
        let mut lam = vec![0.0; grid.n_steps() + 1];
        let mut cum = vec![0.0; grid.n_steps() + 1];
        for i in 0..grid.n_steps() {
            let (a, b) = (grid.t(i), grid.t(i + 1));
            lam[i + 1] = lam[i] + 0.5 * dt * (self.l(a) + self.l(b));
            cum[i + 1] = cum[i] + 0.5 * dt * (self.c(a) + self.c(b));
        }
        (lam, cum)
    }
}

pub type CustomFn = Arc<dyn Fn(f64, f64, &[f64], &[f64]) -> f64 + Send + Sync>;

/// A user-supplied generator `f(t, y, z, u)`.
#[derive(Clone)]
pub struct CustomGenerator {
    pub name: String,
    pub f: CustomFn,
}

impl CustomGenerator {
    pub fn new(name: &str, f: impl Fn(f64, f64, &[f64], &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self { name: name.to_string(), f: Arc::new(f) }
    }
}

impl fmt::Debug for CustomGenerator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Custom({})", self.name)
    }
}

#[derive(Debug, Clone)]
pub enum GeneratorKind {
    /// `δ/2 |z|² + (1/δ) j(δu)`.
    Canonical,
    /// `q̄ = c|y| + l + δ/2 |z|² + (1/δ) j(δu)`.
    UpperBound,
    /// `q̲ = −c|y| − l − δ/2 |z|² − (1/δ) j(−δu)`.
    LowerBound,
    /// `q̄ⁿ`, the inf-convolution of `q̄` with `n|·|` in `(z, u)`.
    TruncatedUpper(f64),
    /// `q̲ᵐ`, the sup-convolution of `q̲` with `m|·|` in `(z, u)`.
    TruncatedLower(f64),
    /// `f̄ⁿ + f̲ᵐ` for `f = base`: the positive part is inf-convolved with
    /// `n|·|`, the nonpositive part sup-convolved with `m|·|`.
    Ladder { base: Box<GeneratorKind>, n: f64, m: f64, oracle: OracleGrid },
    Custom(CustomGenerator),
}

impl GeneratorKind {
    pub fn ladder(base: GeneratorKind, n: f64, m: f64) -> Self {
        GeneratorKind::Ladder { base: Box::new(base), n, m, oracle: OracleGrid::default() }
    }

    pub fn name(&self) -> String {
        match self {
            GeneratorKind::Canonical => "canonical".into(),
            GeneratorKind::UpperBound => "upper_bound".into(),
            GeneratorKind::LowerBound => "lower_bound".into(),
            GeneratorKind::TruncatedUpper(n) => format!("truncated_upper({n})"),
            GeneratorKind::TruncatedLower(m) => format!("truncated_lower({m})"),
            GeneratorKind::Ladder { base, n, m, .. } => format!("ladder({}, {n}, {m})", base.name()),
            GeneratorKind::Custom(c) => format!("custom({})", c.name),
        }
    }
}

/// A generator together with its structure coefficients and jump model.
#[derive(Debug, Clone)]
pub struct Generator {
    kind: GeneratorKind,
    params: StructureParams,
    model: Arc<JumpModel>,
}

impl Generator {
    pub fn new(kind: GeneratorKind, params: StructureParams, model: Arc<JumpModel>) -> Result<Self> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        match &kind {
            GeneratorKind::TruncatedUpper(n) => positive("n", *n)?,
            GeneratorKind::TruncatedLower(m) => positive("m", *m)?,
            GeneratorKind::Ladder { base, n, m, oracle } => {
                positive("n", *n)?;
                positive("m", *m)?;
                let c_star = params.c_star();
                if *n < c_star || *m < c_star {
                    return Err(Error::Config(format!(
                        "ladder indices (n={n}, m={m}) must be at least c* = {c_star}"
                    )));
                }
                match base.as_ref() {
                    GeneratorKind::Ladder { .. } => {
                        return Err(Error::Config("a ladder cannot wrap another ladder".into()))
                    }
                    GeneratorKind::TruncatedUpper(k) => positive("n", *k)?,
                    GeneratorKind::TruncatedLower(k) => positive("m", *k)?,
                    _ => {}
                }
                oracle.validate()?;
            }
            _ => {}
        }
        Ok(Self { kind, params, model })
    }

    pub fn kind(&self) -> &GeneratorKind {
        &self.kind
    }

    pub fn params(&self) -> &StructureParams {
        &self.params
    }

    pub fn model(&self) -> &Arc<JumpModel> {
        &self.model
    }

    pub fn name(&self) -> String {
        self.kind.name()
    }

    /// Same parameters and model, different kind.
    pub fn with_kind(&self, kind: GeneratorKind) -> Result<Self> {
        Self::new(kind, self.params.clone(), self.model.clone())
    }

    pub fn eval(&self, t: f64, y: f64, z: &[f64], u: &[f64]) -> f64 {
        self.eval_kind(&self.kind, t, y, z, u)
    }

    fn eval_kind(&self, kind: &GeneratorKind, t: f64, y: f64, z: &[f64], u: &[f64]) -> f64 {
        match kind {
            GeneratorKind::Canonical => self.canonical(t, z, u),
            GeneratorKind::UpperBound => self.upper_bound(t, y, z, u),
            GeneratorKind::LowerBound => self.lower_bound(t, y, z, u),
            GeneratorKind::TruncatedUpper(n) => self.truncated_upper(*n, t, y, z, u),
            GeneratorKind::TruncatedLower(m) => self.truncated_lower(*m, t, y, z, u),
            GeneratorKind::Ladder { .. } => {
                let (up, low) = self.ladder_parts(t, y, z, u).expect("ladder kind");
                up + low
            }
            GeneratorKind::Custom(c) => (c.f)(t, y, z, u),
        }
    }

    /// `(f̄ⁿ, f̲ᵐ)` for a ladder generator, `None` otherwise.
    pub fn ladder_parts(&self, t: f64, y: f64, z: &[f64], u: &[f64]) -> Option<(f64, f64)> {
        let GeneratorKind::Ladder { base, n, m, oracle } = &self.kind else {
            return None;
        };
        let (n, m) = (*n, *m);
        Some(match base.as_ref() {
            GeneratorKind::Canonical => (self.truncated_canonical(n, t, z, u), 0.0),
            GeneratorKind::UpperBound => (self.truncated_upper(n, t, y, z, u), 0.0),
            GeneratorKind::LowerBound => (0.0, self.truncated_lower(m, t, y, z, u)),
            GeneratorKind::TruncatedUpper(k) => (self.truncated_upper(k.min(n), t, y, z, u), 0.0),
            GeneratorKind::TruncatedLower(k) => (0.0, self.truncated_lower(k.min(m), t, y, z, u)),
            GeneratorKind::Custom(c) => {
                let weights = self.model.rates(t);
                let f = &c.f;
                let up = infconv_oracle(|w, v| f(t, y, w, v).max(0.0), n, z, u, &weights, &oracle.around(z, u, n))
                    .expect("validated oracle grid");
                let low = supconv_oracle(|w, v| f(t, y, w, v).min(0.0), m, z, u, &weights, &oracle.around(z, u, m))
                    .expect("validated oracle grid");
                (up, low)
            }
            GeneratorKind::Ladder { .. } => unreachable!("rejected at construction"),
        })
    }

    /// Whether a ladder generator is evaluated through the numerical oracle.
    pub fn uses_oracle(&self) -> bool {
        matches!(&self.kind, GeneratorKind::Ladder { base, .. } if matches!(base.as_ref(), GeneratorKind::Custom(_)))
    }

    fn quad(&self, z: &[f64]) -> f64 {
        0.5 * self.params.delta * z.iter().map(|x| x * x).sum::<f64>()
    }

    fn canonical(&self, t: f64, z: &[f64], u: &[f64]) -> f64 {
        let d = self.params.delta;
        self.quad(z) + j_value(&self.model, t, u, d) / d
    }

    fn upper_bound(&self, t: f64, y: f64, z: &[f64], u: &[f64]) -> f64 {
        self.params.c(t) * y.abs() + self.params.l(t) + self.canonical(t, z, u)
    }

    fn lower_bound(&self, t: f64, y: f64, z: &[f64], u: &[f64]) -> f64 {
        let d = self.params.delta;
        -self.params.c(t) * y.abs() - self.params.l(t) - self.quad(z) - j_value(&self.model, t, u, -d) / d
    }

    fn truncated_canonical(&self, n: f64, t: f64, z: &[f64], u: &[f64]) -> f64 {
        let d = self.params.delta;
        let jumps: f64 = u
            .iter()
            .enumerate()
            .map(|(k, &uk)| truncated_g(n, d * uk) * self.model.rate(t, k))
            .sum();
        huber(d, n, norm(z)) + jumps / d
    }

    fn truncated_upper(&self, n: f64, t: f64, y: f64, z: &[f64], u: &[f64]) -> f64 {
        self.params.c(t) * y.abs() + self.params.l(t) + self.truncated_canonical(n, t, z, u)
    }

    fn truncated_lower(&self, m: f64, t: f64, y: f64, z: &[f64], u: &[f64]) -> f64 {
        let neg_u: Vec<f64> = u.iter().map(|x| -x).collect();
        -self.params.c(t) * y.abs() - self.params.l(t) - self.truncated_canonical(m, t, z, &neg_u)
    }

    /// `γ` with `f(u) − f(ū) ≤ Σ_k γ_k (u_k − ū_k) ξλ_k` for the kinds where
    /// it is known in closed form; `None` for custom generators and oracle
    /// ladders.
    pub fn gamma(&self, t: f64, u: &[f64], u_bar: &[f64]) -> Option<Vec<f64>> {
        let _ = t;
        let d = self.params.delta;
        let convex = |cap: Option<f64>| -> Vec<f64> {
            u.iter().map(|&x| clamp_opt((d * x).exp_m1(), cap)).collect()
        };
        let concave = |cap: Option<f64>| -> Vec<f64> {
            u_bar.iter().map(|&x| clamp_opt((-d * x).exp_m1(), cap)).collect()
        };
        match &self.kind {
            GeneratorKind::Canonical | GeneratorKind::UpperBound => Some(convex(None)),
            GeneratorKind::LowerBound => Some(concave(None)),
            GeneratorKind::TruncatedUpper(n) => Some(convex(Some(*n))),
            GeneratorKind::TruncatedLower(m) => Some(concave(Some(*m))),
            GeneratorKind::Ladder { base, n, m, .. } => match base.as_ref() {
                GeneratorKind::Canonical | GeneratorKind::UpperBound => Some(convex(Some(*n))),
                GeneratorKind::TruncatedUpper(k) => Some(convex(Some(k.min(*n)))),
                GeneratorKind::LowerBound => Some(concave(Some(*m))),
                GeneratorKind::TruncatedLower(k) => Some(concave(Some(k.min(*m)))),
                _ => None,
            },
            GeneratorKind::Custom(_) => None,
        }
    }

    /// Lipschitz constant in `(z, u)` for the truncated kinds, with `|z|`
    /// Euclidean and `u` measured in the `ξλ`-weighted L¹ norm.
    pub fn lipschitz_zu(&self) -> Option<f64> {
        match &self.kind {
            GeneratorKind::TruncatedUpper(n) | GeneratorKind::TruncatedLower(n) => Some(*n),
            GeneratorKind::Ladder { n, m, .. } => Some(n + m),
            _ => None,
        }
    }
}

fn clamp_opt(x: f64, cap: Option<f64>) -> f64 {
    match cap {
        Some(c) => x.clamp(-c, c),
        None => x,
    }
}

pub(crate) fn norm(z: &[f64]) -> f64 {
    z.iter().map(|x| x * x).sum::<f64>().sqrt()
}
