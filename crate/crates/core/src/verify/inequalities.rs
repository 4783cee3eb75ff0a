use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ReportBuilder, SampleSpec, VerificationReport};
use crate::error::{Error, Result};
use crate::generators::{j_value, Generator};
use crate::jump_model::JumpModel;

/// `j_t(γ k u) ≥ k j_t(γ u)` for `k ∈ [1, 10]` and `γ ∈ {−1, 1}`.
pub fn check_jump_inequality(model: &JumpModel, spec: &SampleSpec) -> VerificationReport {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1);
    let mut report = ReportBuilder::new("jump_inequality", 1e-12);
    let mut min_margin = f64::INFINITY;
    for s in spec.draw(model.brownian_dim(), model.n_marks()) {
        let k: f64 = rng.random_range(1.0..=10.0);
        for gamma in [1.0, -1.0] {
            let lhs = j_value(model, s.t, &s.u, gamma * k);
            let rhs = k * j_value(model, s.t, &s.u, gamma);
            min_margin = min_margin.min(lhs - rhs);
            report.observe(rhs - lhs, || format!("t={} u={:?} k={k} γ={gamma}: {lhs} < {rhs}", s.t, s.u));
        }
    }
    report.metric("min_margin", min_margin);
    report.finish()
}

/// `f(t,y,z,u) − f(t,y,z,ū) ≤ Σ_k γ_k (u_k − ū_k) ξλ_k` with `−1 ≤ γ ≤ cap`.
///
/// Kinds with a closed-form `γ` use it and also check its range against
/// `cap` (default: the truncation level, unbounded otherwise). Custom
/// generators need `cap` and are tested against the most favourable
/// `γ ∈ [−1, cap]`.
pub fn check_agamma_increment(gen: &Generator, spec: &SampleSpec, cap: Option<f64>) -> Result<VerificationReport> {
    let model = gen.model();
    let (d, k) = (model.brownian_dim(), model.n_marks());
    let closed_form = gen.gamma(0.0, &vec![0.0; k], &vec![0.0; k]).is_some();
    let cap = match (closed_form, cap) {
        (_, Some(c)) => c,
        (true, None) => gen.lipschitz_zu().unwrap_or(f64::INFINITY),
        (false, None) => {
            return Err(Error::Contract(format!(
                "{} has no closed-form γ; supply an upper bound for γ",
                gen.name()
            )))
        }
    };
    let mut report = ReportBuilder::new("agamma_increment", 1e-12);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in spec.draw(d, k) {
        let rates = model.rates(s.t);
        let diff = gen.eval(s.t, s.y, &s.z, &s.u) - gen.eval(s.t, s.y, &s.z, &s.u_bar);
        let (pairing, range_violation) = match gen.gamma(s.t, &s.u, &s.u_bar) {
            Some(gamma) => {
                let mut range = 0.0f64;
                for &g in &gamma {
                    lo = lo.min(g);
                    hi = hi.max(g);
                    range = range.max(-1.0 - g).max(g - cap);
                }
                let pairing: f64 = (0..k).map(|a| gamma[a] * (s.u[a] - s.u_bar[a]) * rates[a]).sum();
                (pairing, range)
            }
            None => {
                let pairing: f64 = (0..k)
                    .map(|a| {
                        let delta = s.u[a] - s.u_bar[a];
                        rates[a] * if delta > 0.0 { cap * delta } else { -delta }
                    })
                    .sum();
                (pairing, 0.0)
            }
        };
        let v = (diff - pairing).max(range_violation);
        report.observe(v, || format!("t={} y={} z={:?} u={:?} ū={:?}: increment {diff} vs {pairing}", s.t, s.y, s.z, s.u, s.u_bar));
    }
    if closed_form {
        report.metric("gamma_min", lo);
        report.metric("gamma_max", hi);
    }
    report.metric("gamma_cap", cap);
    Ok(report.finish())
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::generators::{g, CustomGenerator, GeneratorKind, StructureParams};
    use crate::jump_model::MarkSpace;

    fn model() -> Arc<JumpModel> {
        Arc::new(JumpModel::with_constant_intensity(MarkSpace::new(vec![1.0, 2.0], vec![1.0, 0.5]).unwrap(), 1.0).unwrap())
    }

    fn spec() -> SampleSpec {
        SampleSpec { n_samples: 2_000, ..SampleSpec::default() }
    }

    #[test]
    fn scalar_instance() {
        let m = JumpModel::with_constant_intensity(MarkSpace::new(vec![1.0], vec![1.0]).unwrap(), 1.0).unwrap();
        let u = [2f64.ln()];
        assert!((j_value(&m, 0.0, &u, 2.0) - (3.0 - 2.0 * 2f64.ln())).abs() < 1e-12);
        assert!((2.0 * j_value(&m, 0.0, &u, 1.0) - 2.0 * (1.0 - 2f64.ln())).abs() < 1e-12);
        assert!(check_jump_inequality(&m, &spec()).passed);
    }

    #[test]
    fn truncated_kinds_satisfy_agamma_with_bounded_gamma() {
        let params = StructureParams::constant(0.1, 0.2, 1.0).unwrap();
        for kind in [GeneratorKind::TruncatedUpper(1.0), GeneratorKind::TruncatedLower(2.0), GeneratorKind::Canonical] {
            let gen = Generator::new(kind, params.clone(), model()).unwrap();
            let r = check_agamma_increment(&gen, &spec(), None).unwrap();
            assert!(r.passed, "{}: {r}", gen.name());
            assert!(r.metric("gamma_min").unwrap() >= -1.0);
        }
    }

    #[test]
    fn truncated_upper_gamma_stays_below_level() {
        let gen = Generator::new(GeneratorKind::TruncatedUpper(1.0), StructureParams::canonical(1.0).unwrap(), model()).unwrap();
        let r = check_agamma_increment(&gen, &spec(), None).unwrap();
        assert!(r.metric("gamma_max").unwrap() <= 1.0);
    }

    #[test]
    fn custom_generator_needs_cap() {
        let f = CustomGenerator::new("odd", |_, _, _, u: &[f64]| 0.5 * (g(u[0]) - g(-u[0])));
        let gen = Generator::new(GeneratorKind::Custom(f), StructureParams::canonical(1.0).unwrap(), model()).unwrap();
        assert!(check_agamma_increment(&gen, &spec(), None).is_err());
        // Its slope cosh(u) − 1 reaches 9.07 on [−3, 3]; a cap of 1 must fail.
        assert!(!check_agamma_increment(&gen, &spec(), Some(1.0)).unwrap().passed);
        assert!(check_agamma_increment(&gen, &spec(), Some(11.0)).unwrap().passed);
    }

    #[test]
    fn concave_jump_functional_violates_agamma() {
        let f = CustomGenerator::new("neg_j", |_, _, _, u: &[f64]| -5.0 * g(u[0]));
        let gen = Generator::new(GeneratorKind::Custom(f), StructureParams::canonical(1.0).unwrap(), model()).unwrap();
        let r = check_agamma_increment(&gen, &spec(), Some(100.0)).unwrap();
        assert!(!r.passed && r.witness.is_some());
    }
}
