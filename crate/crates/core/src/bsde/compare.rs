use super::BsdeSolution;
use crate::error::{Error, Result};
use crate::generators::{Generator, SampleSpec};
use crate::verify::{ReportBuilder, VerificationReport};

/// Node-wise check of `Y_A ≤ Y_B` at every stored layer.
///
/// Violations are measured relative to `max(1, |Y_B|)` so the tolerance
/// matches the Picard stopping rule.
pub fn compare(a: &BsdeSolution, b: &BsdeSolution, tolerance: f64) -> Result<VerificationReport> {
    let (la, lb) = (a.layers()?, b.layers()?);
    if a.grid != b.grid || a.backend != b.backend || la.y.len() != lb.y.len() {
        return Err(Error::Contract("solutions live on different grids".into()));
    }
    let mut report = ReportBuilder::new("comparison", tolerance);
    for (i, (ya, yb)) in la.y.iter().zip(&lb.y).enumerate() {
        if ya.len() != yb.len() {
            return Err(Error::Contract(format!("layer {i} sizes differ: {} vs {}", ya.len(), yb.len())));
        }
        for (node, (&x, &y)) in ya.iter().zip(yb).enumerate() {
            report.observe(((x - y) / y.abs().max(1.0)).max(0.0), || format!("t_{i} node {node}: {x} > {y}"));
        }
    }
    let mut out = report.finish();
    out.metrics.push(("y0_difference".into(), b.y0 - a.y0));
    Ok(out)
}

/// Samples `f_A(t, y, z, u) ≤ f_B(t, y, z, u)`.
pub fn check_generator_ordering(a: &Generator, b: &Generator, spec: &SampleSpec) -> VerificationReport {
    let model = a.model();
    let mut report = ReportBuilder::new("generator_ordering", 1e-12);
    for s in spec.draw(model.brownian_dim(), model.n_marks()) {
        let fa = a.eval(s.t, s.y, &s.z, &s.u);
        let fb = b.eval(s.t, s.y, &s.z, &s.u);
        report.observe((fa - fb).max(0.0), || format!("t={} y={} z={:?} u={:?}: {fa} > {fb}", s.t, s.y, s.z, s.u));
    }
    report.finish()
}
