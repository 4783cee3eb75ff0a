use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};

const BLOCK: usize = 4096;

/// Polynomial basis of total degree `≤ degree` on standardized state
/// coordinates, fitted by ridge-regularized least squares.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasisSpec {
    pub degree: usize,
    pub ridge: f64,
}

impl Default for BasisSpec {
    fn default() -> Self {
        Self { degree: 3, ridge: 1e-8 }
    }
}

/// Least-squares projection onto the basis evaluated at a fixed set of states.
///
/// The Gram matrix is accumulated over fixed row blocks and the block partials
/// are summed in block order, so fits do not depend on the thread count.
pub struct Projection {
    design: Vec<f64>,
    width: usize,
    rows: usize,
    factor: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl Projection {
    /// `states` is row-major with `cols` coordinates per row.
    pub fn new(states: &[f64], cols: usize, spec: &BasisSpec, step: usize) -> Result<Self> {
        if cols == 0 {
            return Err(Error::Contract("regression needs at least one state coordinate".into()));
        }
        let rows = states.len() / cols;
        if rows == 0 {
            return Err(Error::Contract("regression needs at least one row".into()));
        }
        if !(spec.ridge.is_finite() && spec.ridge >= 0.0) {
            return Err(Error::Config(format!("ridge must be >= 0, got {}", spec.ridge)));
        }
        let columns = standardize(states, cols, rows, spec.degree);
        let monomials = monomials(&columns, spec.degree);
        let width = monomials.len();

        let mut design = vec![0.0; rows * width];
        design.par_chunks_mut(width).enumerate().for_each(|(r, row)| {
            for (b, mono) in monomials.iter().enumerate() {
                let mut v = 1.0;
                for &(c, e) in mono {
                    let col = &columns[c];
                    let x = (states[r * cols + col.index].clamp(col.lo, col.hi) - col.mean) / col.scale;
                    v *= x.powi(e as i32);
                }
                row[b] = v;
            }
        });

        let partials: Vec<Vec<f64>> = design
            .par_chunks(BLOCK * width)
            .map(|block| {
                let mut g = vec![0.0; width * width];
                for row in block.chunks(width) {
                    for a in 0..width {
                        let ra = row[a];
                        for b in a..width {
                            g[a * width + b] += ra * row[b];
                        }
                    }
                }
                g
            })
            .collect();
        let mut gram = vec![0.0; width * width];
        for p in &partials {
            for (acc, v) in gram.iter_mut().zip(p) {
                *acc += v;
            }
        }
        let inv_rows = 1.0 / rows as f64;
        for a in 0..width {
            for b in a..width {
                let v = gram[a * width + b] * inv_rows;
                gram[a * width + b] = v;
                gram[b * width + a] = v;
            }
            gram[a * width + a] += spec.ridge;
        }
        let max_diag = (0..width).map(|a| gram[a * width + a]).fold(0.0, f64::max);
        let factor = DMatrix::from_row_slice(width, width, &gram)
            .cholesky()
            .ok_or(Error::SingularRegression { step })?;
        let l = factor.l_dirty();
        let min_pivot = (0..width).map(|a| l[(a, a)] * l[(a, a)]).fold(f64::INFINITY, f64::min);
        if spec.ridge == 0.0 && min_pivot <= 1e-13 * max_diag {
            return Err(Error::SingularRegression { step });
        }
        Ok(Self { design, width, rows, factor })
    }

    pub fn n_basis(&self) -> usize {
        self.width
    }

    /// Fitted values `Xβ` of the least-squares fit of `target`.
    pub fn project(&self, target: &[f64]) -> Vec<f64> {
        assert_eq!(target.len(), self.rows, "target length");
        let w = self.width;
        let partials: Vec<Vec<f64>> = self
            .design
            .par_chunks(BLOCK * w)
            .zip(target.par_chunks(BLOCK))
            .map(|(block, ys)| {
                let mut acc = vec![0.0; w];
                for (row, y) in block.chunks(w).zip(ys) {
                    for b in 0..w {
                        acc[b] += row[b] * y;
                    }
                }
                acc
            })
            .collect();
        let mut rhs = vec![0.0; w];
        for p in &partials {
            for (a, v) in rhs.iter_mut().zip(p) {
                *a += v;
            }
        }
        let inv_rows = 1.0 / self.rows as f64;
        let rhs = nalgebra::DVector::from_iterator(w, rhs.into_iter().map(|v| v * inv_rows));
        let beta = self.factor.solve(&rhs);
        self.design
            .par_chunks(w)
            .map(|row| row.iter().zip(beta.iter()).map(|(x, b)| x * b).sum())
            .collect()
    }
}

struct Column {
    index: usize,
    lo: f64,
    hi: f64,
    mean: f64,
    scale: f64,
    max_degree: usize,
}

/// Fraction of rows beyond each end of the band a coordinate is clamped to.
const TAIL: f64 = 1e-4;
/// Floor on the clamped rows per end, for fits with at least 1000 rows per
/// clamped row.
const MIN_TAIL_ROWS: usize = 10;

/// Each coordinate is clamped to its central empirical band before
/// standardizing, so sparsely populated tail states take the fitted value at
/// the band edge rather than a polynomial extrapolation.
fn standardize(states: &[f64], cols: usize, rows: usize, degree: usize) -> Vec<Column> {
    let mut out = Vec::new();
    for c in 0..cols {
        let mut sorted: Vec<f64> = (0..rows).map(|r| states[r * cols + c]).collect();
        sorted.sort_by(f64::total_cmp);
        let cut = (((rows as f64) * TAIL).floor() as usize).max(MIN_TAIL_ROWS.min(rows / 1000));
        let (lo, hi) = (sorted[cut], sorted[rows - 1 - cut]);
        let xs: Vec<f64> = (0..rows).map(|r| states[r * cols + c].clamp(lo, hi)).collect();
        let mean = crate::numeric::mean(&xs);
        let dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
        let sd = (crate::numeric::pairwise_sum(&dev) / rows as f64).sqrt();
        if !(sd > 1e-12 * (1.0 + mean.abs())) {
            continue;
        }
        let mut distinct = 1;
        for w in sorted[cut..rows - cut].windows(2) {
            if w[1] != w[0] {
                distinct += 1;
                if distinct > degree {
                    break;
                }
            }
        }
        let max_degree = degree.min(distinct - 1);
        out.push(Column { index: c, lo, hi, mean, scale: sd, max_degree });
    }
    out
}

/// Exponent lists `(column, power)` in graded lexicographic order.
fn monomials(columns: &[Column], degree: usize) -> Vec<Vec<(usize, usize)>> {
    let mut out = Vec::new();
    for total in 0..=degree {
        let mut exps = vec![0usize; columns.len()];
        collect(columns, total, 0, &mut exps, &mut out);
    }
    out
}

fn collect(columns: &[Column], remaining: usize, pos: usize, exps: &mut Vec<usize>, out: &mut Vec<Vec<(usize, usize)>>) {
    if pos == columns.len() {
        if remaining == 0 {
            out.push(exps.iter().enumerate().filter(|(_, &e)| e > 0).map(|(c, &e)| (c, e)).collect());
        }
        return;
    }
    for e in (0..=remaining.min(columns[pos].max_degree)).rev() {
        exps[pos] = e;
        collect(columns, remaining - e, pos + 1, exps, out);
    }
    exps[pos] = 0;
}
