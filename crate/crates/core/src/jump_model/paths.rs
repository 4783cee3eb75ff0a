use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;

use super::{JumpModel, TimeGrid};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"QEXPPATH";
const FORMAT_VERSION: u32 = 1;

/// Simulated Brownian increments and per-mark jump counts.
///
/// Layout is path-major: `dw[(p * N + i) * d + j]` and
/// `jumps[(p * N + i) * K + k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle {
    n_paths: usize,
    grid: TimeGrid,
    dim: usize,
    n_marks: usize,
    seed: u64,
    dw: Vec<f64>,
    jumps: Vec<u32>,
}

/// Borrowed view of a single simulated path.
#[derive(Debug, Clone, Copy)]
pub struct PathView<'a> {
    bundle: &'a PathBundle,
    path: usize,
}

impl<'a> PathView<'a> {
    pub fn index(&self) -> usize {
        self.path
    }

    pub fn dw(&self, i: usize) -> &'a [f64] {
        let d = self.bundle.dim;
        let start = (self.path * self.bundle.grid.n_steps() + i) * d;
        &self.bundle.dw[start..start + d]
    }

    pub fn jumps(&self, i: usize) -> &'a [u32] {
        let k = self.bundle.n_marks;
        let start = (self.path * self.bundle.grid.n_steps() + i) * k;
        &self.bundle.jumps[start..start + k]
    }

    pub fn n_steps(&self) -> usize {
        self.bundle.grid.n_steps()
    }
}

impl PathBundle {
    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_marks(&self) -> usize {
        self.n_marks
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dw_raw(&self) -> &[f64] {
        &self.dw
    }

    pub fn jumps_raw(&self) -> &[u32] {
        &self.jumps
    }

    pub fn path(&self, p: usize) -> PathView<'_> {
        assert!(p < self.n_paths, "path index {p} out of range");
        PathView { bundle: self, path: p }
    }

    pub fn dw(&self, p: usize, i: usize, j: usize) -> f64 {
        self.dw[(p * self.grid.n_steps() + i) * self.dim + j]
    }

    pub fn jump(&self, p: usize, i: usize, k: usize) -> u32 {
        self.jumps[(p * self.grid.n_steps() + i) * self.n_marks + k]
    }

    /// Markov state `(W_{t_i}, N_{t_i})` of every path, row-major with
    /// `d + K` columns.
    pub fn states_at(&self, i: usize) -> Vec<f64> {
        let (d, k, n) = (self.dim, self.n_marks, self.grid.n_steps());
        let width = d + k;
        let mut out = vec![0.0; self.n_paths * width];
        out.par_chunks_mut(width.max(1)).enumerate().for_each(|(p, row)| {
            if width == 0 {
                return;
            }
            for step in 0..i {
                let base = p * n + step;
                for j in 0..d {
                    row[j] += self.dw[base * d + j];
                }
                for m in 0..k {
                    row[d + m] += f64::from(self.jumps[base * k + m]);
                }
            }
        });
        out
    }

    /// Writes the bundle as a flat little-endian file.
    ///
    /// Header: magic `QEXPPATH`, format version (u32), P, N, K, d (u64 each),
    /// seed (u64), horizon (f64); then all `dW` as f64 and all counts as u32.
    pub fn write_to(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        for v in [self.n_paths, self.grid.n_steps(), self.n_marks, self.dim] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&self.grid.horizon().to_le_bytes())?;
        for x in &self.dw {
            w.write_all(&x.to_le_bytes())?;
        }
        for c in &self.jumps {
            w.write_all(&c.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Io(format!("{} is not a path bundle", path.display())));
        }
        let version = u32::from_le_bytes(read_array(&mut r)?);
        if version != FORMAT_VERSION {
            return Err(Error::Io(format!("unsupported path bundle version {version}")));
        }
        let mut dims = [0usize; 4];
        for v in dims.iter_mut() {
            *v = u64::from_le_bytes(read_array(&mut r)?) as usize;
        }
        let [n_paths, n_steps, n_marks, dim] = dims;
        let seed = u64::from_le_bytes(read_array(&mut r)?);
        let horizon = f64::from_le_bytes(read_array(&mut r)?);
        let grid = TimeGrid::new(horizon, n_steps)?;
        let mut dw = Vec::with_capacity(n_paths * n_steps * dim);
        for _ in 0..n_paths * n_steps * dim {
            dw.push(f64::from_le_bytes(read_array(&mut r)?));
        }
        let mut jumps = Vec::with_capacity(n_paths * n_steps * n_marks);
        for _ in 0..n_paths * n_steps * n_marks {
            jumps.push(u32::from_le_bytes(read_array(&mut r)?));
        }
        Ok(Self { n_paths, grid, dim, n_marks, seed, dw, jumps })
    }
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

/// Simulates `n_paths` independent paths.
///
/// Path `p` draws from its own ChaCha8 stream (`stream = p`) keyed by `seed`,
/// so the bundle does not depend on how paths are scheduled across threads.
/// Jump counts are exact Poisson draws with left-endpoint means.
pub fn simulate_paths(model: &JumpModel, grid: &TimeGrid, n_paths: usize, seed: u64) -> Result<PathBundle> {
    if n_paths == 0 {
        return Err(Error::Config("number of paths must be positive".into()));
    }
    model.validate_on(grid)?;
    let (n, d, k) = (grid.n_steps(), model.brownian_dim(), model.n_marks());
    let sqrt_dt = grid.dt().sqrt();
    let mut poissons: Vec<Option<Poisson<f64>>> = Vec::with_capacity(n * k);
    for i in 0..n {
        for m in 0..k {
            let mean = model.step_mean(grid, i, m);
            poissons.push(if mean > 0.0 {
                Some(Poisson::new(mean).map_err(|e| Error::Config(format!("Poisson mean {mean}: {e}")))?)
            } else {
                None
            });
        }
    }

    let per_path: Vec<(Vec<f64>, Vec<u32>)> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(p as u64);
            let mut dw = Vec::with_capacity(n * d);
            let mut counts = Vec::with_capacity(n * k);
            for i in 0..n {
                for _ in 0..d {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    dw.push(z * sqrt_dt);
                }
                for m in 0..k {
                    let c = match &poissons[i * k + m] {
                        Some(dist) => dist.sample(&mut rng) as u32,
                        None => 0,
                    };
                    counts.push(c);
                }
            }
            (dw, counts)
        })
        .collect();

    let mut dw = Vec::with_capacity(n_paths * n * d);
    let mut jumps = Vec::with_capacity(n_paths * n * k);
    for (a, b) in per_path {
        dw.extend_from_slice(&a);
        jumps.extend_from_slice(&b);
    }
    Ok(PathBundle { n_paths, grid: *grid, dim: d, n_marks: k, seed, dw, jumps })
}
