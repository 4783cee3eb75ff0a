use crate::error::{Error, Result};

/// Search grid of the inf-/sup-convolution oracle.
///
/// Candidates are `target + h·k` for integer vectors `k` with
/// `|k_j| h ≤ radius` in every coordinate, so the target itself is always a
/// candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleGrid {
    pub radius: f64,
    pub step: f64,
}

impl Default for OracleGrid {
    fn default() -> Self {
        Self { radius: 0.0, step: 0.05 }
    }
}

impl OracleGrid {
    pub fn validate(&self) -> Result<()> {
        if !(self.step.is_finite() && self.step > 0.0) || !(self.radius.is_finite() && self.radius >= 0.0) {
            return Err(Error::Contract(format!(
                "oracle grid needs a positive step and a nonnegative radius, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Grid with radius `|z| + |u|₁ + n + self.radius`, enough to contain the
    /// minimiser for generators dominated by the growth bounds.
    pub fn around(&self, z: &[f64], u: &[f64], n: f64) -> OracleGrid {
        let zn = z.iter().map(|x| x * x).sum::<f64>().sqrt();
        let un: f64 = u.iter().map(|x| x.abs()).sum();
        OracleGrid { radius: zn + un + n + self.radius, step: self.step }
    }

    fn half_width(&self) -> i64 {
        (self.radius / self.step + 1e-9).floor() as i64
    }
}

fn scan(
    dims: usize,
    half: i64,
    mut visit: impl FnMut(&[i64]),
) {
    let mut idx = vec![-half; dims];
    loop {
        visit(&idx);
        let mut j = 0;
        loop {
            if j == dims {
                return;
            }
            idx[j] += 1;
            if idx[j] <= half {
                break;
            }
            idx[j] = -half;
            j += 1;
        }
    }
}

fn convolve(
    f: impl Fn(&[f64], &[f64]) -> f64,
    n: f64,
    z: &[f64],
    u: &[f64],
    weights: &[f64],
    grid: &OracleGrid,
    sign: f64,
) -> Result<f64> {
    grid.validate()?;
    if weights.len() != u.len() {
        return Err(Error::Contract(format!("{} weights for {} marks", weights.len(), u.len())));
    }
    let (d, k) = (z.len(), u.len());
    let h = grid.step;
    let mut w = z.to_vec();
    let mut v = u.to_vec();
    let mut best = f64::INFINITY;
    scan(d + k, grid.half_width(), |idx| {
        let mut zdist = 0.0;
        for j in 0..d {
            let off = idx[j] as f64 * h;
            w[j] = z[j] + off;
            zdist += off * off;
        }
        let mut udist = 0.0;
        for j in 0..k {
            let off = idx[d + j] as f64 * h;
            v[j] = u[j] + off;
            udist += weights[j] * off.abs();
        }
        let cand = sign * f(&w, &v) + n * (zdist.sqrt() + udist);
        if cand < best {
            best = cand;
        }
    });
    if best.is_nan() {
        return Err(Error::Numerical("oracle objective is NaN".into()));
    }
    Ok(sign * best)
}

/// `min over the grid of f(w, v) + n|z − w| + n Σ_k ξλ_k |u_k − v_k|`.
///
/// Never below the exact inf-convolution; converges to it as `step → 0` when
/// the grid contains the minimiser.
pub fn infconv_oracle(
    f: impl Fn(&[f64], &[f64]) -> f64,
    n: f64,
    z: &[f64],
    u: &[f64],
    weights: &[f64],
    grid: &OracleGrid,
) -> Result<f64> {
    convolve(f, n, z, u, weights, grid, 1.0)
}

/// `max over the grid of f(w, v) − n|z − w| − n Σ_k ξλ_k |u_k − v_k|`.
pub fn supconv_oracle(
    f: impl Fn(&[f64], &[f64]) -> f64,
    n: f64,
    z: &[f64],
    u: &[f64],
    weights: &[f64],
    grid: &OracleGrid,
) -> Result<f64> {
    convolve(|w, v| f(w, v), n, z, u, weights, grid, -1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::g;

    fn half_square(w: &[f64], _: &[f64]) -> f64 {
        0.5 * w[0] * w[0]
    }

    #[test]
    fn steep_cone_reproduces_the_function() {
        let grid = OracleGrid { radius: 4.0, step: 0.01 };
        let v = infconv_oracle(half_square, 50.0, &[1.3], &[], &[], &grid).unwrap();
        assert!((v - 0.5 * 1.69).abs() < 1e-12);
    }

    #[test]
    fn quadratic_with_unit_cone_matches_huber() {
        let grid = OracleGrid { radius: 3.0, step: 0.01 };
        let v = infconv_oracle(half_square, 1.0, &[2.0], &[], &[], &grid).unwrap();
        assert!((v - 1.5).abs() <= 2.0 * 0.01);
        assert!(v >= 1.5 - 1e-12);
    }

    #[test]
    fn jump_branch_matches_closed_form() {
        let grid = OracleGrid { radius: 3.0, step: 0.005 };
        let u = 3f64.ln();
        let v = infconv_oracle(|_, v| g(v[0]), 1.0, &[], &[u], &[1.0], &grid).unwrap();
        let closed = -2.0 * 2f64.ln() + u + 1.0;
        assert!(v >= closed - 1e-12 && v - closed <= 2.0 * 0.005, "{v} vs {closed}");
    }

    #[test]
    fn sup_convolution_mirrors_inf_convolution() {
        let grid = OracleGrid { radius: 3.0, step: 0.01 };
        let a = supconv_oracle(|w, _| -half_square(w, &[]), 1.0, &[2.0], &[], &[], &grid).unwrap();
        let b = infconv_oracle(half_square, 1.0, &[2.0], &[], &[], &grid).unwrap();
        assert_eq!(a, -b);
    }

    #[test]
    fn invalid_grid_is_a_contract_error() {
        let grid = OracleGrid { radius: 1.0, step: 0.0 };
        assert!(matches!(infconv_oracle(half_square, 1.0, &[0.0], &[], &[], &grid), Err(Error::Contract(_))));
    }
}
