use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{JumpModel, TimeGrid};
use crate::error::{Error, Result};

const MAX_LAYER_NODES: usize = 50_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branching {
    /// `±√Δt` with probability ½ each.
    Binomial,
    /// `{-√(3Δt), 0, +√(3Δt)}` with probabilities `{1/6, 2/3, 1/6}`.
    Trinomial,
}

impl Branching {
    pub fn from_factor(factor: usize) -> Result<Self> {
        match factor {
            2 => Ok(Branching::Binomial),
            3 => Ok(Branching::Trinomial),
            other => Err(Error::Config(format!("Brownian branching must be 2 or 3, got {other}"))),
        }
    }

    pub fn factor(self) -> usize {
        match self {
            Branching::Binomial => 2,
            Branching::Trinomial => 3,
        }
    }

    fn moves(self, dt: f64) -> Vec<(f64, f64)> {
        match self {
            Branching::Binomial => {
                let s = dt.sqrt();
                vec![(-s, 0.5), (s, 0.5)]
            }
            Branching::Trinomial => {
                let s = (3.0 * dt).sqrt();
                vec![(-s, 1.0 / 6.0), (0.0, 2.0 / 3.0), (s, 1.0 / 6.0)]
            }
        }
    }
}

/// One outgoing transition, identical for every node of a layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Branch {
    pub prob: f64,
    pub dw: f64,
    /// Bit `k` set when mark `k` jumps on this branch.
    pub jump_bits: u32,
    /// Child index relative to the parent's base index in the next layer.
    pub offset: usize,
}

impl Branch {
    pub fn jumps(&self, k: usize) -> bool {
        self.jump_bits >> k & 1 == 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeState {
    pub level: i64,
    pub w: f64,
    pub counts: Vec<u32>,
}

/// Recombining lattice for `d = 1` with at most `count_cap` jumps per mark and
/// step.
///
/// Layer `i` holds `B_i · M_i^K` nodes with `B_i = i + 1` (binomial) or
/// `2i + 1` (trinomial) Brownian levels and `M_i = i · cap + 1` count values
/// per mark. Node index = `b + B_i · Σ_k c_k M_i^k`.
#[derive(Debug, Clone)]
pub struct Lattice {
    grid: TimeGrid,
    branching: Branching,
    count_cap: u32,
    n_marks: usize,
    level_step: f64,
    jump_probs: Vec<Vec<f64>>,
    branches: Vec<Vec<Branch>>,
}

/// Node indices of lattice paths drawn by [`Lattice::sample_paths`].
#[derive(Debug, Clone, PartialEq)]
pub struct LatticePaths {
    pub n_paths: usize,
    pub n_steps: usize,
    /// `nodes[p * (N + 1) + i]`
    pub nodes: Vec<usize>,
    /// `branches[p * N + i]`: index into `Lattice::branches(i)`.
    pub branches: Vec<usize>,
}

impl LatticePaths {
    pub fn node(&self, p: usize, i: usize) -> usize {
        self.nodes[p * (self.n_steps + 1) + i]
    }

    pub fn branch(&self, p: usize, i: usize) -> usize {
        self.branches[p * self.n_steps + i]
    }
}

impl Lattice {
    pub fn build(model: &JumpModel, grid: &TimeGrid, brownian_branching: usize, count_cap: u32) -> Result<Self> {
        let branching = Branching::from_factor(brownian_branching)?;
        if model.brownian_dim() != 1 {
            return Err(Error::Config("the lattice supports one Brownian dimension only".into()));
        }
        if count_cap > 1 {
            return Err(Error::Config(format!(
                "per-step jump cap must be 0 or 1, got {count_cap}"
            )));
        }
        model.validate_on(grid)?;
        let k_marks = model.n_marks();
        if k_marks > 16 {
            return Err(Error::Config("the lattice supports at most 16 marks".into()));
        }
        let dt = grid.dt();
        for (k, &lambda) in model.mark_space().weights().iter().enumerate() {
            let bound = lambda * model.xi_bound() * dt;
            if count_cap > 0 && bound >= 1.0 {
                return Err(Error::StepSize(format!(
                    "mark {k}: λ·C_ν·Δt = {bound} must be below 1"
                )));
            }
        }

        let n = grid.n_steps();
        let last_layer = layer_size(branching, count_cap, k_marks, n)
            .filter(|&s| s <= MAX_LAYER_NODES)
            .ok_or_else(|| Error::Config(format!("lattice with {n} steps and {k_marks} marks is too large")))?;
        debug_assert!(last_layer > 0);

        let moves = branching.moves(dt);
        let mut jump_probs = Vec::with_capacity(n);
        let mut branches = Vec::with_capacity(n);
        for i in 0..n {
            let probs: Vec<f64> = (0..k_marks)
                .map(|k| if count_cap == 0 { 0.0 } else { model.step_mean(grid, i, k) })
                .collect();
            let next_b = brownian_width(branching, i + 1);
            let next_m = count_width(count_cap, i + 1);
            let patterns: u32 = if count_cap == 0 { 1 } else { 1 << k_marks };
            let mut layer = Vec::with_capacity(patterns as usize * moves.len());
            for bits in 0..patterns {
                let mut p_jump = 1.0;
                let mut count_offset = 0usize;
                let mut stride = 1usize;
                for (k, &p) in probs.iter().enumerate() {
                    if bits >> k & 1 == 1 {
                        p_jump *= p;
                        count_offset += stride;
                    } else {
                        p_jump *= 1.0 - p;
                    }
                    stride *= next_m;
                }
                for (m, &(dw, p_move)) in moves.iter().enumerate() {
                    layer.push(Branch {
                        prob: p_move * p_jump,
                        dw,
                        jump_bits: bits,
                        offset: m + next_b * count_offset,
                    });
                }
            }
            jump_probs.push(probs);
            branches.push(layer);
        }

        let level_step = match branching {
            Branching::Binomial => dt.sqrt(),
            Branching::Trinomial => (3.0 * dt).sqrt(),
        };
        Ok(Self { grid: *grid, branching, count_cap, n_marks: k_marks, level_step, jump_probs, branches })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n_steps(&self) -> usize {
        self.grid.n_steps()
    }

    pub fn dt(&self) -> f64 {
        self.grid.dt()
    }

    pub fn branching(&self) -> Branching {
        self.branching
    }

    pub fn count_cap(&self) -> u32 {
        self.count_cap
    }

    pub fn n_marks(&self) -> usize {
        self.n_marks
    }

    /// Brownian increment between adjacent levels.
    pub fn level_step(&self) -> f64 {
        self.level_step
    }

    /// Per-step jump probability of mark `k` on step `i`.
    pub fn jump_prob(&self, i: usize, k: usize) -> f64 {
        self.jump_probs[i][k]
    }

    pub fn branches(&self, i: usize) -> &[Branch] {
        &self.branches[i]
    }

    pub fn n_nodes(&self, i: usize) -> usize {
        layer_size(self.branching, self.count_cap, self.n_marks, i).expect("checked at build")
    }

    pub fn total_nodes(&self) -> usize {
        (0..=self.n_steps()).map(|i| self.n_nodes(i)).sum()
    }

    fn decode(&self, i: usize, idx: usize) -> (usize, usize, usize) {
        let bw = brownian_width(self.branching, i);
        (idx % bw, idx / bw, count_width(self.count_cap, i))
    }

    pub fn node_state(&self, i: usize, idx: usize) -> NodeState {
        let (b, mut rest, m) = self.decode(i, idx);
        let level = match self.branching {
            Branching::Binomial => 2 * b as i64 - i as i64,
            Branching::Trinomial => b as i64 - i as i64,
        };
        let mut counts = Vec::with_capacity(self.n_marks);
        for _ in 0..self.n_marks {
            counts.push((rest % m) as u32);
            rest /= m;
        }
        NodeState { level, w: level as f64 * self.level_step, counts }
    }

    /// Index in layer `i + 1` reached from node `idx` by the branch with
    /// offset 0.
    pub fn child_base(&self, i: usize, idx: usize) -> usize {
        let (b, mut rest, m) = self.decode(i, idx);
        let next_b = brownian_width(self.branching, i + 1);
        let next_m = count_width(self.count_cap, i + 1);
        let mut encoded = 0usize;
        let mut stride = 1usize;
        for _ in 0..self.n_marks {
            encoded += (rest % m) * stride;
            rest /= m;
            stride *= next_m;
        }
        b + next_b * encoded
    }

    pub fn node_values<F>(&self, i: usize, f: F) -> Vec<f64>
    where
        F: Fn(&NodeState) -> f64 + Sync,
    {
        (0..self.n_nodes(i)).into_par_iter().map(|idx| f(&self.node_state(i, idx))).collect()
    }

    /// `E_i[next]` at every node of layer `i`.
    pub fn expect_step(&self, i: usize, next: &[f64]) -> Vec<f64> {
        debug_assert_eq!(next.len(), self.n_nodes(i + 1));
        let branches = &self.branches[i];
        (0..self.n_nodes(i))
            .into_par_iter()
            .map(|idx| {
                let base = self.child_base(i, idx);
                branches.iter().map(|br| br.prob * next[base + br.offset]).sum()
            })
            .collect()
    }

    /// `ln E_i[exp(next)]` at every node of layer `i`.
    pub fn log_expect_exp_step(&self, i: usize, next: &[f64]) -> Vec<f64> {
        debug_assert_eq!(next.len(), self.n_nodes(i + 1));
        let branches = &self.branches[i];
        (0..self.n_nodes(i))
            .into_par_iter()
            .map(|idx| {
                let base = self.child_base(i, idx);
                let mut max = f64::NEG_INFINITY;
                for br in branches.iter().filter(|b| b.prob > 0.0) {
                    max = max.max(next[base + br.offset]);
                }
                if max == f64::NEG_INFINITY {
                    return max;
                }
                let acc: f64 = branches
                    .iter()
                    .filter(|b| b.prob > 0.0)
                    .map(|br| br.prob * (next[base + br.offset] - max).exp())
                    .sum();
                max + acc.ln()
            })
            .collect()
    }

    /// Unconditional node probabilities of every layer.
    pub fn node_probabilities(&self) -> Vec<Vec<f64>> {
        let mut layers = vec![vec![1.0]];
        for i in 0..self.n_steps() {
            let mut next = vec![0.0; self.n_nodes(i + 1)];
            let cur = &layers[i];
            for (idx, &p) in cur.iter().enumerate() {
                let base = self.child_base(i, idx);
                for br in &self.branches[i] {
                    next[base + br.offset] += p * br.prob;
                }
            }
            layers.push(next);
        }
        layers
    }

    /// Draws paths through the lattice with the transition probabilities.
    pub fn sample_paths(&self, n_paths: usize, seed: u64) -> LatticePaths {
        let n = self.n_steps();
        let per_path: Vec<(Vec<usize>, Vec<usize>)> = (0..n_paths)
            .into_par_iter()
            .map(|p| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(p as u64);
                let mut nodes = Vec::with_capacity(n + 1);
                let mut chosen = Vec::with_capacity(n);
                let mut idx = 0usize;
                nodes.push(idx);
                for i in 0..n {
                    let u: f64 = rng.random();
                    let brs = &self.branches[i];
                    let mut acc = 0.0;
                    let mut pick = brs.len() - 1;
                    for (j, br) in brs.iter().enumerate() {
                        acc += br.prob;
                        if u < acc {
                            pick = j;
                            break;
                        }
                    }
                    while brs[pick].prob == 0.0 && pick > 0 {
                        pick -= 1;
                    }
                    idx = self.child_base(i, idx) + brs[pick].offset;
                    chosen.push(pick);
                    nodes.push(idx);
                }
                (nodes, chosen)
            })
            .collect();
        let mut nodes = Vec::with_capacity(n_paths * (n + 1));
        let mut branches = Vec::with_capacity(n_paths * n);
        for (a, b) in per_path {
            nodes.extend(a);
            branches.extend(b);
        }
        LatticePaths { n_paths, n_steps: n, nodes, branches }
    }
}

fn brownian_width(branching: Branching, i: usize) -> usize {
    match branching {
        Branching::Binomial => i + 1,
        Branching::Trinomial => 2 * i + 1,
    }
}

fn count_width(cap: u32, i: usize) -> usize {
    i * cap as usize + 1
}

fn layer_size(branching: Branching, cap: u32, k: usize, i: usize) -> Option<usize> {
    let mut size = brownian_width(branching, i);
    let m = count_width(cap, i);
    for _ in 0..k {
        size = size.checked_mul(m)?;
    }
    Some(size)
}
