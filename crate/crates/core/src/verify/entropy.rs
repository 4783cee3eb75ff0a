use super::{check_layers, ReportBuilder, VerificationReport};
use crate::error::Result;
use crate::generators::StructureParams;
use crate::jump_model::Lattice;

/// For every pair of grid times `s < t` and both signs:
/// `±Y_s ≤ ρ_s(±Y_t + Λ_{s,t} + Σ_{s ≤ r < t} |Y_r| ΔC_r) + tol`.
///
/// For fixed `t` the right-hand side is built backward as
/// `G_r = ΔΛ_r + |Y_r| ΔC_r + ρ_r(G_{r+1})`, which is exact because each
/// added term is known at `r`.
pub fn check_entropy_inequality(
    y: &[Vec<f64>],
    lattice: &Lattice,
    params: &StructureParams,
    tolerance: f64,
) -> Result<VerificationReport> {
    check_layers(y, lattice)?;
    let n = lattice.n_steps();
    let delta = params.delta();
    let (lam, cum) = params.cumulative(lattice.grid());
    let mut report = ReportBuilder::new("entropy_inequality", tolerance);
    let mut pairs = 0usize;
    for t in 1..=n {
        for sign in [1.0f64, -1.0] {
            let mut g: Vec<f64> = y[t].iter().map(|v| sign * v).collect();
            for r in (0..t).rev() {
                let scaled: Vec<f64> = g.iter().map(|v| delta * v).collect();
                let lse = lattice.log_expect_exp_step(r, &scaled);
                let (d_lam, d_cum) = (lam[r + 1] - lam[r], cum[r + 1] - cum[r]);
                g = lse
                    .iter()
                    .zip(&y[r])
                    .map(|(l, yr)| l / delta + d_lam + yr.abs() * d_cum)
                    .collect();
                for (node, (gv, yr)) in g.iter().zip(&y[r]).enumerate() {
                    let v = sign * yr - gv;
                    report.observe(v.max(0.0), || {
                        let side = if sign > 0.0 { "Y" } else { "-Y" };
                        format!("{side} at t_{r} node {node} exceeds the entropic bound from t_{t} by {v:e}")
                    });
                }
                pairs += 1;
            }
        }
    }
    report.metric("time_pairs", (pairs / 2) as f64);
    Ok(report.finish())
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::bsde::{solve_lattice, LatticeSolverConfig, Terminal};
    use crate::entropic::{rho, ConditionalBackend};
    use crate::generators::{Generator, GeneratorKind};
    use crate::jump_model::{JumpModel, MarkSpace, TimeGrid};

    fn setup() -> (Arc<JumpModel>, Lattice) {
        let model = Arc::new(JumpModel::with_constant_intensity(MarkSpace::new(vec![1.0], vec![1.0]).unwrap(), 1.0).unwrap());
        let lat = Lattice::build(&model, &TimeGrid::new(1.0, 12).unwrap(), 3, 1).unwrap();
        (model, lat)
    }

    #[test]
    fn entropic_process_satisfies_both_sides() {
        let (_, lat) = setup();
        let b = ConditionalBackend::LatticeExact(&lat);
        let eta = lat.node_values(12, |s| s.w - 0.3 * f64::from(s.counts[0]));
        let y: Vec<Vec<f64>> = (0..=12).map(|i| rho(&b, &eta, 12, i, 1.0).unwrap()).collect();
        let r = check_entropy_inequality(&y, &lat, &StructureParams::canonical(1.0).unwrap(), 1e-12).unwrap();
        assert!(r.passed, "{r}");
        assert_eq!(r.metric("time_pairs"), Some(78.0));
    }

    #[test]
    fn structured_solution_passes_at_scheme_tolerance() {
        let (model, lat) = setup();
        let params = StructureParams::constant(0.3, 0.5, 1.0).unwrap();
        let gen = Generator::new(GeneratorKind::TruncatedUpper(3.0), params.clone(), model).unwrap();
        let eta = Terminal::Affine { constant: 0.0, brownian: vec![1.0], counts: vec![-0.5] };
        let sol = solve_lattice(&gen, &eta, &lat, &LatticeSolverConfig::default()).unwrap();
        let tol = 5.0 * lat.dt() * (1.0 + sol.diagnostics.sup_abs_generator);
        let r = check_entropy_inequality(&sol.layers().unwrap().y, &lat, &params, tol).unwrap();
        assert!(r.passed, "{r}");
    }

    #[test]
    fn drift_beyond_structure_is_caught() {
        // X_t = 2t rises faster than Λ allows on the −X side.
        let (_, lat) = setup();
        let y: Vec<Vec<f64>> = (0..=12).map(|i| vec![2.0 * lat.grid().t(i); lat.n_nodes(i)]).collect();
        let params = StructureParams::constant(1.0, 0.0, 1.0).unwrap();
        let r = check_entropy_inequality(&y, &lat, &params, 1e-9).unwrap();
        assert!(!r.passed);
        assert!(r.witness.unwrap().starts_with("-Y"));
    }
}
