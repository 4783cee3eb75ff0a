//! Order-fixed reductions and small numerical helpers.
//!
//! Every reduction here has a fixed association order that depends only on
//! the input length, so results do not depend on how the inputs were produced
//! (sequentially or by a parallel map).

const PAIRWISE_LEAF: usize = 64;

/// Pairwise (tree) summation with a fixed split rule.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= PAIRWISE_LEAF {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    pairwise_sum(xs) / xs.len() as f64
}

/// Sample mean and standard error of the mean.
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n < 2 {
        return (mean(xs), f64::NAN);
    }
    let m = mean(xs);
    let dev: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
    let var = pairwise_sum(&dev) / (n - 1) as f64;
    (m, (var / n as f64).sqrt())
}

/// `ln Σ p_i exp(v_i)` evaluated with a max shift.
pub fn log_sum_exp_weighted(probs: &[f64], values: &[f64]) -> f64 {
    debug_assert_eq!(probs.len(), values.len());
    let mut max = f64::NEG_INFINITY;
    for (&p, &v) in probs.iter().zip(values) {
        if p > 0.0 && v > max {
            max = v;
        }
    }
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let mut acc = 0.0;
    for (&p, &v) in probs.iter().zip(values) {
        if p > 0.0 {
            acc += p * (v - max).exp();
        }
    }
    max + acc.ln()
}

/// Empirical quantile by nearest rank on a sorted copy.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let q = q.clamp(0.0, 1.0);
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_exact_small_integers() {
        let xs: Vec<f64> = (1..=1000).map(f64::from).collect();
        assert_eq!(pairwise_sum(&xs), 500_500.0);
    }

    #[test]
    fn log_sum_exp_is_shift_stable() {
        let p = [0.25, 0.75];
        let v = [1000.0, 1001.0];
        let direct = 1000.0 + (0.25 + 0.75 * 1f64.exp()).ln();
        assert!((log_sum_exp_weighted(&p, &v) - direct).abs() < 1e-12);
    }

    #[test]
    fn zero_probability_branches_are_ignored() {
        let p = [0.0, 1.0];
        let v = [f64::INFINITY, 2.0];
        assert_eq!(log_sum_exp_weighted(&p, &v), 2.0);
    }

    #[test]
    fn standard_error_of_constant_is_zero() {
        let (m, se) = mean_and_se(&[3.0; 10]);
        assert_eq!(m, 3.0);
        assert_eq!(se, 0.0);
    }
}
