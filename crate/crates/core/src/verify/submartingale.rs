use super::{check_layers, ReportBuilder, VerificationReport};
use crate::error::Result;
use crate::generators::StructureParams;
use crate::jump_model::Lattice;

/// Which exponential transform is tested.
#[derive(Debug, Clone, Copy)]
pub enum ExpClass<'a> {
    /// `exp(X)` and `exp(−X)`.
    Plain,
    /// `exp(Y^{Λ,C}(±δX))` and `U^{Λ,C}(e^{±δX})`.
    Structured(&'a StructureParams),
}

/// One-step submartingale tests at every node:
///
/// - plain: `E_i[e^{±ΔX}] ≥ 1 − tol`;
/// - structured: `E_i[e^{±δΔX}] e^{ΔΛ + |δX_i| ΔC} ≥ 1 − tol` and
///   `E_i[e^{±δΔX}] ≥ 1 − ΔΛ − |δX_i| ΔC − tol`.
///
/// Over one step these are exactly the submartingale inequalities of the
/// transformed processes, since the added integrals are predictable.
pub fn check_exp_submartingale(
    x: &[Vec<f64>],
    lattice: &Lattice,
    class: ExpClass<'_>,
    tolerance: f64,
) -> Result<VerificationReport> {
    check_layers(x, lattice)?;
    let n = lattice.n_steps();
    let (delta, lam, cum) = match class {
        ExpClass::Plain => (1.0, vec![0.0; n + 1], vec![0.0; n + 1]),
        ExpClass::Structured(p) => {
            let (l, c) = p.cumulative(lattice.grid());
            (p.delta(), l, c)
        }
    };
    let name = match class {
        ExpClass::Plain => "exp_submartingale",
        ExpClass::Structured(_) => "exp_transform_submartingale",
    };
    let mut report = ReportBuilder::new(name, tolerance);
    let mut worst_side = [0.0f64; 2];
    for i in 0..n {
        let (d_lam, d_cum) = (lam[i + 1] - lam[i], cum[i + 1] - cum[i]);
        for (s, sign) in [1.0f64, -1.0].into_iter().enumerate() {
            let scaled: Vec<f64> = x[i + 1].iter().map(|v| sign * delta * v).collect();
            let log_mgf = lattice.log_expect_exp_step(i, &scaled);
            for (node, lm) in log_mgf.iter().enumerate() {
                let xi = x[i][node];
                let log_ratio = lm - sign * delta * xi;
                let push = d_lam + (delta * xi).abs() * d_cum;
                let exp_form = -(log_ratio + push).exp_m1();
                let linear_form = (1.0 - push) - log_ratio.exp();
                let v = exp_form.max(linear_form).max(0.0);
                worst_side[s] = worst_side[s].max(v);
                report.observe(v, || {
                    let side = if sign > 0.0 { "+" } else { "-" };
                    format!("t_{i} node {node}, side {side}: X = {xi}, ln E[e^(δΔX)] = {log_ratio:e}")
                });
            }
        }
    }
    report.metric("max_violation_plus", worst_side[0]);
    report.metric("max_violation_minus", worst_side[1]);
    Ok(report.finish())
}

/// `|E_i[e^{X_{i+1}}] / e^{X_i} − 1| ≤ tol` at every node.
pub fn check_exp_martingale(x: &[Vec<f64>], lattice: &Lattice, tolerance: f64) -> Result<VerificationReport> {
    check_layers(x, lattice)?;
    let mut report = ReportBuilder::new("exp_martingale", tolerance);
    for i in 0..lattice.n_steps() {
        let log_mgf = lattice.log_expect_exp_step(i, &x[i + 1]);
        for (node, lm) in log_mgf.iter().enumerate() {
            let v = (lm - x[i][node]).exp_m1().abs();
            report.observe(v, || format!("t_{i} node {node}: E[e^(ΔX)] − 1 = {v:e}"));
        }
    }
    Ok(report.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropic::{rho, ConditionalBackend};
    use crate::jump_model::{JumpModel, MarkSpace, TimeGrid};

    fn lattice() -> Lattice {
        let model = JumpModel::with_constant_intensity(MarkSpace::new(vec![1.0], vec![1.0]).unwrap(), 1.0).unwrap();
        Lattice::build(&model, &TimeGrid::new(1.0, 10).unwrap(), 3, 1).unwrap()
    }

    fn entropic_layers(lat: &Lattice) -> Vec<Vec<f64>> {
        let b = ConditionalBackend::LatticeExact(lat);
        let eta = lat.node_values(10, |s| 0.7 * s.w - 0.4 * f64::from(s.counts[0]));
        (0..=10).map(|i| rho(&b, &eta, 10, i, 1.0).unwrap()).collect()
    }

    #[test]
    fn entropic_process_is_exponential_martingale() {
        let lat = lattice();
        let x = entropic_layers(&lat);
        let r = check_exp_martingale(&x, &lat, 1e-12).unwrap();
        assert!(r.passed, "{r}");
        assert!(check_exp_submartingale(&x, &lat, ExpClass::Plain, 1e-12).unwrap().passed);
    }

    #[test]
    fn decreasing_deterministic_path_fails_plus_side() {
        let lat = lattice();
        let x: Vec<Vec<f64>> = (0..=10).map(|i| vec![-0.5 * i as f64; lat.n_nodes(i)]).collect();
        let r = check_exp_submartingale(&x, &lat, ExpClass::Plain, 1e-6).unwrap();
        assert!(!r.passed);
        assert!(r.witness.as_deref().unwrap().contains("side +"));
        assert_eq!(r.metric("max_violation_minus"), Some(0.0));
    }

    #[test]
    fn structure_drift_absorbs_decrease() {
        // X_t = −t decreases at rate 1; Λ_t = t compensates it.
        let lat = lattice();
        let x: Vec<Vec<f64>> = (0..=10).map(|i| vec![-0.1 * i as f64; lat.n_nodes(i)]).collect();
        assert!(!check_exp_submartingale(&x, &lat, ExpClass::Plain, 1e-9).unwrap().passed);
        let params = StructureParams::constant(1.0, 0.0, 1.0).unwrap();
        let r = check_exp_submartingale(&x, &lat, ExpClass::Structured(&params), 1e-9).unwrap();
        assert!(r.passed, "{r}");
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let lat = lattice();
        assert!(check_exp_martingale(&[vec![0.0]], &lat, 1e-9).is_err());
    }
}
