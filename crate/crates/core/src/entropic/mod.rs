//! Conditional expectations, entropic risk measures and the entropy bound.
//!
//! Values at a time index are node vectors on the lattice (layer order) and
//! per-path vectors on Monte-Carlo bundles.

mod regression;
mod transforms;

use crate::error::{Error, Result};
use crate::generators::StructureParams;
use crate::jump_model::{Lattice, PathBundle};
use crate::numeric::quantile;

pub use regression::{BasisSpec, Projection};
pub use transforms::{transform_u, transform_y, transform_ybar};

/// Regression on the Markov state `(W_t, N_t)` of simulated paths.
#[derive(Debug, Clone, Copy)]
pub struct RegressionBackend<'a> {
    pub paths: &'a PathBundle,
    pub basis: BasisSpec,
    /// Upper winsorization quantile applied to exponentiated payoffs.
    pub winsor_quantile: Option<f64>,
}

impl<'a> RegressionBackend<'a> {
    pub fn new(paths: &'a PathBundle, basis: BasisSpec) -> Self {
        Self { paths, basis, winsor_quantile: Some(1.0 - 1e-6) }
    }

    pub fn projection_at(&self, t_index: usize) -> Result<Projection> {
        let cols = self.paths.dim() + self.paths.n_marks();
        Projection::new(&self.paths.states_at(t_index), cols, &self.basis, t_index)
    }
}

#[derive(Debug, Clone, Copy)]
pub enum ConditionalBackend<'a> {
    LatticeExact(&'a Lattice),
    RegressionMc(RegressionBackend<'a>),
}

impl ConditionalBackend<'_> {
    pub fn n_steps(&self) -> usize {
        match self {
            ConditionalBackend::LatticeExact(l) => l.n_steps(),
            ConditionalBackend::RegressionMc(r) => r.paths.grid().n_steps(),
        }
    }

    fn check_indices(&self, payoff: &[f64], payoff_index: usize, t_index: usize) -> Result<()> {
        if t_index > payoff_index || payoff_index > self.n_steps() {
            return Err(Error::Contract(format!(
                "cannot condition a payoff at index {payoff_index} on index {t_index}"
            )));
        }
        let expected = match self {
            ConditionalBackend::LatticeExact(l) => l.n_nodes(payoff_index),
            ConditionalBackend::RegressionMc(r) => r.paths.n_paths(),
        };
        if payoff.len() != expected {
            return Err(Error::Contract(format!("payoff has {} values, expected {expected}", payoff.len())));
        }
        Ok(())
    }
}

/// `E[payoff | F_{t_index}]` for a payoff observed at `payoff_index`.
pub fn cond_expect(
    backend: &ConditionalBackend<'_>,
    payoff: &[f64],
    payoff_index: usize,
    t_index: usize,
) -> Result<Vec<f64>> {
    backend.check_indices(payoff, payoff_index, t_index)?;
    match backend {
        ConditionalBackend::LatticeExact(lat) => {
            let mut v = payoff.to_vec();
            for i in (t_index..payoff_index).rev() {
                v = lat.expect_step(i, &v);
            }
            Ok(v)
        }
        ConditionalBackend::RegressionMc(reg) => {
            if t_index == payoff_index {
                return Ok(payoff.to_vec());
            }
            Ok(reg.projection_at(t_index)?.project(payoff))
        }
    }
}

/// `(1/δ) ln E[exp(δψ) | F_{t_index}]`.
///
/// The lattice evaluates nested one-step log-sum-exps, so the tower property
/// holds exactly; the regression backend fits `exp(δψ − max δψ)` once.
pub fn rho(
    backend: &ConditionalBackend<'_>,
    payoff: &[f64],
    payoff_index: usize,
    t_index: usize,
    delta: f64,
) -> Result<Vec<f64>> {
    if !(delta.is_finite() && delta != 0.0) {
        return Err(Error::Config(format!("δ must be finite and nonzero, got {delta}")));
    }
    backend.check_indices(payoff, payoff_index, t_index)?;
    let scaled: Vec<f64> = payoff.iter().map(|x| delta * x).collect();
    if scaled.iter().any(|x| x.is_nan()) {
        return Err(Error::Numerical("payoff contains NaN".into()));
    }
    match backend {
        ConditionalBackend::LatticeExact(lat) => {
            let mut v = scaled;
            for i in (t_index..payoff_index).rev() {
                v = lat.log_expect_exp_step(i, &v);
            }
            Ok(v.into_iter().map(|x| x / delta).collect())
        }
        ConditionalBackend::RegressionMc(reg) => {
            if t_index == payoff_index {
                return Ok(payoff.to_vec());
            }
            let mut v = scaled;
            if let Some(q) = reg.winsor_quantile {
                let cap = quantile(&v, q);
                for x in v.iter_mut() {
                    *x = x.min(cap);
                }
            }
            let shift = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let expo: Vec<f64> = v.iter().map(|x| (x - shift).exp()).collect();
            let fitted = reg.projection_at(t_index)?.project(&expo);
            fitted
                .into_iter()
                .enumerate()
                .map(|(p, e)| {
                    if e > 0.0 {
                        Ok((e.ln() + shift) / delta)
                    } else {
                        Err(Error::Numerical(format!(
                            "regressed exponential moment {e:e} is not positive on path {p}; \
                             lower the basis degree or add paths"
                        )))
                    }
                })
                .collect()
        }
    }
}

/// `ρ_t[e^{C_T − C_t}|η_T| + Σ_{s ≥ t} e^{C_s − C_t} ΔΛ_s]` at every grid time,
/// with `ρ` the entropic risk measure of parameter `δ`.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropicBoundProcess {
    pub values: Vec<Vec<f64>>,
}

impl EntropicBoundProcess {
    pub fn at(&self, i: usize) -> &[f64] {
        &self.values[i]
    }
}

pub fn entropy_bound(
    backend: &ConditionalBackend<'_>,
    eta_t: &[f64],
    params: &StructureParams,
) -> Result<EntropicBoundProcess> {
    let n = backend.n_steps();
    let grid = match backend {
        ConditionalBackend::LatticeExact(l) => *l.grid(),
        ConditionalBackend::RegressionMc(r) => *r.paths.grid(),
    };
    let (lam, cum) = params.cumulative(&grid);
    if lam.windows(2).any(|w| w[1] < w[0]) || cum.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Contract("Λ and C must be nondecreasing".into()));
    }
    let abs_eta: Vec<f64> = eta_t.iter().map(|x| x.abs()).collect();
    let drift: Vec<f64> = (0..=n)
        .map(|i| (i..n).map(|j| (cum[j] - cum[i]).exp() * (lam[j + 1] - lam[j])).sum())
        .collect();
    let no_discount = cum.iter().all(|&c| c == cum[0]);

    let mut values = vec![Vec::new(); n + 1];
    match backend {
        ConditionalBackend::LatticeExact(lat) if no_discount => {
            backend.check_indices(&abs_eta, n, 0)?;
            let delta = params.delta();
            let mut v: Vec<f64> = abs_eta.iter().map(|x| delta * x).collect();
            values[n] = abs_eta.iter().map(|x| x + drift[n]).collect();
            for i in (0..n).rev() {
                v = lat.log_expect_exp_step(i, &v);
                values[i] = v.iter().map(|x| x / delta + drift[i]).collect();
            }
        }
        _ => {
            for i in 0..=n {
                let a = (cum[n] - cum[i]).exp();
                let scaled: Vec<f64> = abs_eta.iter().map(|x| a * x).collect();
                let r = rho(backend, &scaled, n, i, params.delta())?;
                values[i] = r.into_iter().map(|x| x + drift[i]).collect();
            }
        }
    }
    Ok(EntropicBoundProcess { values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jump_model::{simulate_paths, JumpModel, MarkSpace, TimeGrid};
    use crate::numeric::mean_and_se;
    use proptest::prelude::*;

    fn brownian_lattice(n: usize, branching: usize) -> Lattice {
        Lattice::build(&JumpModel::brownian(1).unwrap(), &TimeGrid::new(1.0, n).unwrap(), branching, 0).unwrap()
    }

    fn jump_lattice(n: usize) -> Lattice {
        let model = JumpModel::with_constant_intensity(MarkSpace::new(vec![1.0], vec![1.0]).unwrap(), 1.0).unwrap();
        Lattice::build(&model, &TimeGrid::new(1.0, n).unwrap(), 3, 1).unwrap()
    }

    #[test]
    fn constants_are_preserved() {
        let lat = jump_lattice(6);
        let b = ConditionalBackend::LatticeExact(&lat);
        let payoff = vec![2.5; lat.n_nodes(6)];
        assert!(cond_expect(&b, &payoff, 6, 0).unwrap().iter().all(|v| (v - 2.5).abs() < 1e-14));
        for delta in [-2.0, 0.5, 3.0] {
            let r = rho(&b, &payoff, 6, 2, delta).unwrap();
            assert!(r.iter().all(|v| (v - 2.5).abs() < 1e-13));
        }
    }

    #[test]
    fn brownian_level_has_zero_mean() {
        let lat = brownian_lattice(10, 2);
        let b = ConditionalBackend::LatticeExact(&lat);
        let w = lat.node_values(10, |s| s.w);
        assert!(cond_expect(&b, &w, 10, 0).unwrap()[0].abs() < 1e-14);
    }

    #[test]
    fn gaussian_mgf_on_trinomial_lattice() {
        let lat = brownian_lattice(400, 3);
        let b = ConditionalBackend::LatticeExact(&lat);
        let w = lat.node_values(400, |s| s.w);
        let r = rho(&b, &w, 400, 0, 1.0).unwrap()[0];
        assert!((r - 0.5).abs() < 1e-4, "{r}");
    }

    #[test]
    fn poisson_mgf_on_jump_lattice() {
        // Per step: ln(1 + p(e^β − 1)) with p = Δt and e^β − 1 = 1.
        let n = 200;
        let lat = jump_lattice(n);
        let b = ConditionalBackend::LatticeExact(&lat);
        let eta = lat.node_values(n, |s| 2f64.ln() * f64::from(s.counts[0]));
        let r = rho(&b, &eta, n, 0, 1.0).unwrap()[0];
        let dt = 1.0 / n as f64;
        assert!((r - n as f64 * dt.ln_1p()).abs() < 1e-12);
        assert!((r - 1.0).abs() < 0.01);
    }

    #[test]
    fn negative_delta_gives_lower_entropic_measure() {
        let lat = brownian_lattice(50, 3);
        let b = ConditionalBackend::LatticeExact(&lat);
        let w = lat.node_values(50, |s| s.w);
        let lower = rho(&b, &w, 50, 0, -1.0).unwrap()[0];
        let neg: Vec<f64> = w.iter().map(|x| -x).collect();
        let upper_of_neg = rho(&b, &neg, 50, 0, 1.0).unwrap()[0];
        assert!((lower + upper_of_neg).abs() < 1e-14);
    }

    #[test]
    fn zero_delta_is_rejected() {
        let lat = brownian_lattice(2, 2);
        let b = ConditionalBackend::LatticeExact(&lat);
        assert!(matches!(rho(&b, &[0.0; 3], 2, 0, 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn regression_second_moment_of_brownian_motion() {
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let paths = simulate_paths(&JumpModel::brownian(1).unwrap(), &grid, 100_000, 3).unwrap();
        let w: Vec<f64> = paths.states_at(4).iter().map(|x| x * x).collect();
        let reg = RegressionBackend::new(&paths, BasisSpec { degree: 2, ridge: 0.0 });
        let b = ConditionalBackend::RegressionMc(reg);
        let at0 = cond_expect(&b, &w, 4, 0).unwrap();
        let (m, se) = mean_and_se(&w);
        assert!((at0[0] - m).abs() < 1e-9);
        assert!((m - 1.0).abs() <= 4.0 * se);
        let at2 = cond_expect(&b, &w, 4, 2).unwrap();
        let s2 = paths.states_at(2);
        // The outermost states are clamped to the band edge by the basis.
        let sq: Vec<f64> = at2
            .iter()
            .zip(&s2)
            .filter(|(_, x)| x.abs() <= 2.5)
            .map(|(v, x)| (v - (x * x + 0.5)).powi(2))
            .collect();
        let rms = crate::numeric::mean(&sq).sqrt();
        assert!(rms < 0.02, "{rms}");
    }

    #[test]
    fn regression_rho_of_brownian_motion() {
        let grid = TimeGrid::new(1.0, 2).unwrap();
        let paths = simulate_paths(&JumpModel::brownian(1).unwrap(), &grid, 100_000, 8).unwrap();
        let w = paths.states_at(2);
        let b = ConditionalBackend::RegressionMc(RegressionBackend::new(&paths, BasisSpec::default()));
        let r = rho(&b, &w, 2, 0, 1.0).unwrap()[0];
        assert!((r - 0.5).abs() < 0.02, "{r}");
    }

    #[test]
    fn entropy_bound_of_constant_payoff_with_discount() {
        let lat = brownian_lattice(20, 2);
        let b = ConditionalBackend::LatticeExact(&lat);
        let params = StructureParams::constant(0.0, 2f64.ln(), 1.0).unwrap();
        let eta = vec![1.0; lat.n_nodes(20)];
        let bound = entropy_bound(&b, &eta, &params).unwrap();
        assert!((bound.at(0)[0] - 2.0).abs() < 1e-12);
        assert!(bound.at(20).iter().all(|v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn entropy_bound_without_structure_is_rho_of_abs() {
        let lat = jump_lattice(8);
        let b = ConditionalBackend::LatticeExact(&lat);
        let eta = lat.node_values(8, |s| s.w - 0.3 * f64::from(s.counts[0]));
        let abs: Vec<f64> = eta.iter().map(|x| x.abs()).collect();
        for delta in [1.0, 0.4, 2.5] {
            let bound = entropy_bound(&b, &eta, &StructureParams::canonical(delta).unwrap()).unwrap();
            for i in [0, 3, 8] {
                let direct = rho(&b, &abs, 8, i, delta).unwrap();
                for (a, c) in bound.at(i).iter().zip(&direct) {
                    assert!((a - c).abs() < 1e-12, "δ = {delta}: {a} vs {c}");
                }
            }
        }
    }

    #[test]
    fn entropy_bound_adds_left_point_drift() {
        let lat = brownian_lattice(10, 2);
        let b = ConditionalBackend::LatticeExact(&lat);
        let params = StructureParams::constant(1.0, 0.5, 1.0).unwrap();
        let eta = vec![0.0; lat.n_nodes(10)];
        let bound = entropy_bound(&b, &eta, &params).unwrap();
        let dt: f64 = 0.1;
        let expected: f64 = (0..10).map(|j| (0.5 * dt * j as f64).exp() * dt).sum();
        assert!((bound.at(0)[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn folded_normal_mgf_matches_monte_carlo() {
        let lat = brownian_lattice(300, 3);
        let b = ConditionalBackend::LatticeExact(&lat);
        let eta = lat.node_values(300, |s| s.w);
        let bound = entropy_bound(&b, &eta, &StructureParams::canonical(1.0).unwrap()).unwrap().at(0)[0];
        let grid = TimeGrid::new(1.0, 1).unwrap();
        let paths = simulate_paths(&JumpModel::brownian(1).unwrap(), &grid, 200_000, 4).unwrap();
        let e: Vec<f64> = paths.dw_raw().iter().map(|x| x.abs().exp()).collect();
        let (m, se) = mean_and_se(&e);
        assert!((bound - m.ln()).abs() <= 4.0 * se / m + 1e-3, "{bound} vs {}", m.ln());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn lattice_rho_properties(
            coeffs in proptest::collection::vec(-1.5f64..1.5, 3),
            shift in -2.0f64..2.0,
            t in 0usize..5,
            d1 in 0.2f64..2.0,
            d2 in 0.2f64..2.0,
        ) {
            let lat = jump_lattice(5);
            let b = ConditionalBackend::LatticeExact(&lat);
            let psi = lat.node_values(5, |s| coeffs[0] * s.w + coeffs[1] * f64::from(s.counts[0]) + coeffs[2] * s.w.abs());
            let bigger: Vec<f64> = psi.iter().map(|x| x + x.abs() * 0.1 + 0.01).collect();
            let r = rho(&b, &psi, 5, t, 1.0).unwrap();
            let rb = rho(&b, &bigger, 5, t, 1.0).unwrap();
            let shifted: Vec<f64> = psi.iter().map(|x| x + shift).collect();
            let rs = rho(&b, &shifted, 5, t, 1.0).unwrap();
            let mean = cond_expect(&b, &psi, 5, t).unwrap();
            let lower = rho(&b, &psi, 5, t, -1.0).unwrap();
            let (lo_d, hi_d) = (d1.min(d2), d1.max(d2));
            let r_lo = rho(&b, &psi, 5, t, lo_d).unwrap();
            let r_hi = rho(&b, &psi, 5, t, hi_d).unwrap();
            for i in 0..r.len() {
                prop_assert!(r[i] <= rb[i] + 1e-12);
                prop_assert!((rs[i] - r[i] - shift).abs() < 1e-12);
                prop_assert!(lower[i] <= mean[i] + 1e-12 && mean[i] <= r[i] + 1e-12);
                prop_assert!(r_lo[i] <= r_hi[i] + 1e-12);
            }
            if t < 5 {
                let mid = rho(&b, &psi, 5, 5 - 1, 1.0).unwrap();
                let nested = rho(&b, &mid, 4, t, 1.0).unwrap();
                for i in 0..r.len() {
                    prop_assert!((nested[i] - r[i]).abs() < 1e-12);
                }
            }
        }
    }
}
