use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Generator, GeneratorKind};
use crate::verify::{ReportBuilder, VerificationReport};

/// Sampling box for randomized property checks.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSpec {
    pub n_samples: usize,
    pub t_range: (f64, f64),
    pub y_range: (f64, f64),
    pub z_range: (f64, f64),
    pub u_range: (f64, f64),
    pub seed: u64,
}

impl Default for SampleSpec {
    fn default() -> Self {
        Self {
            n_samples: 10_000,
            t_range: (0.0, 1.0),
            y_range: (-10.0, 10.0),
            z_range: (-10.0, 10.0),
            u_range: (-3.0, 3.0),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub y: f64,
    pub z: Vec<f64>,
    pub u: Vec<f64>,
    pub u_bar: Vec<f64>,
}

impl SampleSpec {
    /// Deterministic draws for a model with `d` Brownian and `k` jump
    /// coordinates.
    pub fn draw(&self, d: usize, k: usize) -> Vec<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut pick = |(a, b): (f64, f64)| if a < b { rng.random_range(a..b) } else { a };
        (0..self.n_samples)
            .map(|_| Sample {
                t: pick(self.t_range),
                y: pick(self.y_range),
                z: (0..d).map(|_| pick(self.z_range)).collect(),
                u: (0..k).map(|_| pick(self.u_range)).collect(),
                u_bar: (0..k).map(|_| pick(self.u_range)).collect(),
            })
            .collect()
    }
}

fn describe(s: &Sample) -> String {
    format!("t={:.6} y={:.6} z={:?} u={:?}", s.t, s.y, s.z, s.u)
}

/// Checks `q̲ ≤ f ≤ q̄` on random samples; for ladders also the chains
/// `0 ≤ f̄ⁿ ≤ q̄ⁿ ≤ q̄`, `q̲ ≤ q̲ᵐ ≤ f̲ᵐ ≤ 0` and monotonicity in `n`, `m`.
///
/// Closed-form kinds are checked to `1e-10`; oracle ladders to the oracle
/// resolution bound `(n + m)(1 + Σ ξλ) · step · √(d + K)`.
pub fn check_structure(gen: &Generator, spec: &SampleSpec) -> VerificationReport {
    let model = gen.model();
    let (d, k) = (model.brownian_dim(), model.n_marks());
    let with = |kind: GeneratorKind| gen.with_kind(kind).expect("same parameters as a valid generator");
    let upper = with(GeneratorKind::UpperBound);
    let lower = with(GeneratorKind::LowerBound);

    let ladder = match gen.kind() {
        GeneratorKind::Ladder { base, n, m, oracle } => Some((base.as_ref().clone(), *n, *m, *oracle)),
        _ => None,
    };
    let tolerance = match &ladder {
        Some((_, n, m, oracle)) if gen.uses_oracle() => {
            let mass: f64 = model.mark_space().weights().iter().sum::<f64>() * model.xi_bound();
            (n + m) * (1.0 + mass) * oracle.step * ((d + k) as f64).sqrt()
        }
        _ => 1e-10,
    };
    let mut report = ReportBuilder::new("structure", tolerance);
    let next = ladder.as_ref().map(|(base, n, m, oracle)| {
        let up_n = with(GeneratorKind::TruncatedUpper(*n));
        let low_m = with(GeneratorKind::TruncatedLower(*m));
        let bigger = with(GeneratorKind::Ladder { base: Box::new(base.clone()), n: n + 1.0, m: m + 1.0, oracle: *oracle });
        (up_n, low_m, bigger)
    });

    for s in spec.draw(d, k) {
        let f = gen.eval(s.t, s.y, &s.z, &s.u);
        let qu = upper.eval(s.t, s.y, &s.z, &s.u);
        let ql = lower.eval(s.t, s.y, &s.z, &s.u);
        let mut worst = (f - qu).max(ql - f);
        let mut what = "growth bound";
        if let (Some((up_n, low_m, bigger)), Some((fu, fl))) = (&next, gen.ladder_parts(s.t, s.y, &s.z, &s.u)) {
            let qn = up_n.eval(s.t, s.y, &s.z, &s.u);
            let qm = low_m.eval(s.t, s.y, &s.z, &s.u);
            let (fu1, fl1) = bigger.ladder_parts(s.t, s.y, &s.z, &s.u).expect("ladder");
            let checks = [
                (-fu, "upper part below 0"),
                (fu - qn, "upper part above truncated bound"),
                (qn - qu, "truncated upper bound above growth bound"),
                (ql - qm, "truncated lower bound below growth bound"),
                (qm - fl, "lower part below truncated bound"),
                (fl, "lower part above 0"),
                (fu - fu1, "upper part decreasing in n"),
                (fl1 - fl, "lower part increasing in m"),
            ];
            for (v, name) in checks {
                if v > worst {
                    worst = v;
                    what = name;
                }
            }
        }
        report.observe(worst.max(0.0), || format!("{what} at {}", describe(&s)));
    }
    report.metric("tolerance_scale", tolerance);
    report.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::{CustomGenerator, StructureParams};
    use crate::jump_model::{JumpModel, MarkSpace};
    use std::sync::Arc;

    fn model() -> Arc<JumpModel> {
        Arc::new(JumpModel::with_constant_intensity(MarkSpace::new(vec![1.0], vec![1.0]).unwrap(), 1.0).unwrap())
    }

    fn small() -> SampleSpec {
        SampleSpec { n_samples: 2_000, ..SampleSpec::default() }
    }

    #[test]
    fn canonical_and_truncations_pass() {
        let params = StructureParams::constant(0.0, 0.0, 1.0).unwrap();
        for kind in [
            GeneratorKind::Canonical,
            GeneratorKind::TruncatedUpper(2.0),
            GeneratorKind::TruncatedLower(0.5),
            GeneratorKind::ladder(GeneratorKind::Canonical, 3.0, 3.0),
            GeneratorKind::ladder(GeneratorKind::LowerBound, 3.0, 2.0),
        ] {
            let gen = Generator::new(kind, params.clone(), model()).unwrap();
            let r = check_structure(&gen, &small());
            assert!(r.passed, "{}: {r}", gen.name());
        }
    }

    #[test]
    fn shifted_upper_bound_fails_with_witness() {
        let params = StructureParams::constant(0.2, 0.1, 1.0).unwrap();
        let q = Generator::new(GeneratorKind::UpperBound, params.clone(), model()).unwrap();
        let shifted = CustomGenerator::new("q_plus_one", move |t, y, z, u| q.eval(t, y, z, u) + 1.0);
        let gen = Generator::new(GeneratorKind::Custom(shifted), params, model()).unwrap();
        let r = check_structure(&gen, &small());
        assert!(!r.passed);
        assert!((r.max_violation - 1.0).abs() < 1e-9);
        assert!(r.witness.unwrap().contains("growth bound"));
    }

    #[test]
    fn oracle_ladder_of_bounded_custom_passes() {
        let params = StructureParams::constant(0.0, 0.0, 1.0).unwrap();
        let f = CustomGenerator::new("half", |_, _, z, u| {
            0.25 * z[0] * z[0] + 0.5 * (crate::generators::g(u[0]) - crate::generators::g(-u[0]))
        });
        let kind = GeneratorKind::Ladder {
            base: Box::new(GeneratorKind::Custom(f)),
            n: 1.0,
            m: 1.0,
            oracle: crate::generators::OracleGrid { radius: 0.0, step: 0.1 },
        };
        let gen = Generator::new(kind, params, model()).unwrap();
        let spec = SampleSpec { n_samples: 30, z_range: (-2.0, 2.0), u_range: (-1.0, 1.0), ..SampleSpec::default() };
        let r = check_structure(&gen, &spec);
        assert!(r.passed, "{r}");
    }
}
