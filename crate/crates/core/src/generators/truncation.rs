use super::g;

/// `inf_w { δ/2 w² + n|r − w| }`: quadratic up to `|r| = n/δ`, linear beyond.
pub fn huber(delta: f64, n: f64, r: f64) -> f64 {
    let r = r.abs();
    if delta * r <= n {
        0.5 * delta * r * r
    } else {
        n * r - n * n / (2.0 * delta)
    }
}

/// `inf_v { g(v) + n|x − v| }`.
///
/// Equals `g` where `|eˣ − 1| ≤ n` and continues with slope `±n` beyond; the
/// lower branch only exists for `n < 1`.
pub fn truncated_g(n: f64, x: f64) -> f64 {
    let slope = x.exp_m1();
    if slope > n {
        let a = n.ln_1p();
        g(a) + n * (x - a)
    } else if slope < -n {
        let a = (-n).ln_1p();
        g(a) - n * (x - a)
    } else {
        g(x)
    }
}

/// Derivative of [`truncated_g`]: `clamp(eˣ − 1, −n, n)`.
pub fn truncated_g_slope(n: f64, x: f64) -> f64 {
    x.exp_m1().clamp(-n, n)
}

/// Pairing process of `q̄ⁿ` (δ = 1): `γ_k = clamp(e^{u_k} − 1, −n, n)`.
///
/// `q̄ⁿ` is convex in `u`, so its slope at `u` bounds every increment
/// `q̄ⁿ(u) − q̄ⁿ(ū) ≤ Σ_k γ_k (u_k − ū_k) ξλ_k`, and `−1 < γ_k ≤ n`.
pub fn gamma_n(n: f64, u: &[f64]) -> Vec<f64> {
    u.iter().map(|&x| truncated_g_slope(n, x)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Brute-force `inf_v { g(v) + n|x − v| }` on a fine grid around `x`.
    fn brute_truncated_g(n: f64, x: f64) -> f64 {
        let h = 1e-4;
        (-120_000..=120_000)
            .map(|k| {
                let v = x + k as f64 * h;
                g(v) + n * (x - v).abs()
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn matches_grid_oracle_on_both_branches() {
        for &(n, x) in &[(1.0, 3f64.ln()), (2.0, 2.5), (0.5, -3.0), (0.5, 1.0), (5.0, -3.0)] {
            let closed = truncated_g(n, x);
            let brute = brute_truncated_g(n, x);
            assert!((closed - brute).abs() < 2.0 * n * 1e-4, "n={n} x={x}: {closed} vs {brute}");
        }
    }

    #[test]
    fn saturated_branch_is_the_documented_affine_map() {
        let n = 3.0;
        let x = 2.0;
        let expected = -(n + 1.0) * (n + 1.0f64).ln() + n * (x + 1.0);
        assert!((truncated_g(n, x) - expected).abs() < 1e-13);
    }

    #[test]
    fn huber_branches() {
        assert_eq!(huber(1.0, 5.0, 2.0), 2.0);
        assert_eq!(huber(1.0, 1.0, 2.0), 1.5);
        assert_eq!(huber(2.0, 1.0, 2.0), 1.75);
    }

    #[test]
    fn gamma_spec_instance() {
        assert_eq!(gamma_n(1.0, &[3f64.ln()]), vec![1.0]);
    }

    proptest! {
        #[test]
        fn truncation_is_monotone_and_below_g(n in 0.1f64..10.0, x in -3.0f64..3.0) {
            let a = truncated_g(n, x);
            let b = truncated_g(n + 1.0, x);
            prop_assert!(a <= b + 1e-12);
            prop_assert!(b <= g(x) + 1e-12);
            prop_assert!(a >= -1e-15);
        }

        #[test]
        fn agrees_with_g_inside_the_band(n in 0.1f64..10.0, x in -3.0f64..3.0) {
            prop_assume!(x.exp_m1().abs() <= n);
            prop_assert_eq!(truncated_g(n, x), g(x));
        }

        #[test]
        fn lipschitz_with_constant_n(n in 0.1f64..10.0, x in -3.0f64..3.0, dx in -1.0f64..1.0) {
            let diff = (truncated_g(n, x + dx) - truncated_g(n, x)).abs();
            prop_assert!(diff <= n * dx.abs() + 1e-12);
        }

        #[test]
        fn gamma_bounds_every_increment(n in 0.1f64..10.0, x in -3.0f64..3.0, xb in -3.0f64..3.0) {
            let gam = gamma_n(n, &[x])[0];
            prop_assert!(gam > -1.0 && gam <= n);
            prop_assert!(truncated_g(n, x) - truncated_g(n, xb) <= gam * (x - xb) + 1e-12);
        }

        #[test]
        fn huber_is_monotone_in_n(d in 0.1f64..3.0, n in 0.1f64..10.0, r in -10.0f64..10.0) {
            prop_assert!(huber(d, n, r) <= huber(d, n + 1.0, r) + 1e-12);
            prop_assert!(huber(d, n + 1.0, r) <= 0.5 * d * r * r + 1e-12);
        }
    }
}
