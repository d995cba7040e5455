use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::fm::{part_capacity, partition_phase};
use super::hypergraph::PhaseHypergraph;
use crate::error::{Error, Result};
use crate::sparse::ModelDef;

pub const DEFAULT_EPSILON: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Multi-phase fixed-vertex hypergraph partitioning.
    Hgp,
    /// Balance-constrained uniform random rows.
    Random,
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scheme::Hgp => "hgp",
            Scheme::Random => "random",
        })
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hgp" => Ok(Scheme::Hgp),
            "random" => Ok(Scheme::Random),
            other => Err(Error::contract(format!(
                "unknown scheme {other:?} (hgp|random)"
            ))),
        }
    }
}

/// Row-to-worker assignment for the input (phase 0) and every layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub p: u32,
    pub n: u32,
    pub epsilon: f64,
    pub scheme: Scheme,
    /// Owner of input row `j`: contiguous blocks.
    pub input_owner: Vec<u32>,
    /// `phases[k - 1][i]` is the part holding row `i` of layer `k`.
    pub phases: Vec<Vec<u32>>,
}

impl PartitionPlan {
    pub fn n_layers(&self) -> usize {
        self.phases.len()
    }

    /// Owner of row `row` in phase `k` (`k = 0` is the input).
    pub fn owner(&self, k: usize, row: u32) -> u32 {
        self.phase(k)[row as usize]
    }

    pub fn phase(&self, k: usize) -> &[u32] {
        if k == 0 {
            &self.input_owner
        } else {
            &self.phases[k - 1]
        }
    }

    /// Rows held by `m` in phase `k`, ascending.
    pub fn rows_of(&self, k: usize, m: u32) -> Vec<u32> {
        self.phase(k)
            .iter()
            .enumerate()
            .filter(|&(_, &q)| q == m)
            .map(|(i, _)| i as u32)
            .collect()
    }

    /// Input rows owned by `m` as `(start, len)`.
    pub fn input_range(&self, m: u32) -> (u32, u32) {
        input_block(self.n, self.p, m)
    }
}

/// Contiguous block `m` of `n` rows split `p` ways.
pub fn input_block(n: u32, p: u32, m: u32) -> (u32, u32) {
    let start = |q: u32| (u64::from(q) * u64::from(n) / u64::from(p)) as u32;
    let s = start(m);
    (s, start(m + 1) - s)
}

pub fn contiguous_owner(n: u32, p: u32) -> Vec<u32> {
    let mut owner = vec![0u32; n as usize];
    for m in 0..p {
        let (s, len) = input_block(n, p, m);
        owner[s as usize..(s + len) as usize].fill(m);
    }
    owner
}

/// Uniformly random rows, each placed in a random part that still has room.
fn random_phase(weights: &[u64], p: usize, epsilon: f64, rng: &mut ChaCha8Rng) -> Vec<u32> {
    let cap = part_capacity(weights.iter().sum(), p, epsilon);
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.shuffle(rng);
    let mut part_w = vec![0u64; p];
    let mut parts = vec![0u32; weights.len()];
    let mut open: Vec<usize> = Vec::with_capacity(p);
    for v in order {
        open.clear();
        open.extend((0..p).filter(|&q| part_w[q] + weights[v] <= cap));
        let q = if open.is_empty() {
            (0..p).min_by_key(|&q| (part_w[q], q)).expect("p >= 1")
        } else {
            open[rng.gen_range(0..open.len())]
        };
        part_w[q] += weights[v];
        parts[v] = q as u32;
    }
    parts
}

/// Partitions every layer; phase `k` is fixed by phase `k - 1`.
pub fn partition_model(
    model: &ModelDef,
    p: u32,
    epsilon: f64,
    scheme: Scheme,
    seed: u64,
) -> Result<PartitionPlan> {
    if p == 0 {
        return Err(Error::contract("worker count must be >= 1"));
    }
    if p > model.n {
        return Err(Error::Infeasible(format!(
            "{p} workers for {} rows",
            model.n
        )));
    }
    if epsilon.is_nan() || epsilon < 0.0 {
        return Err(Error::contract(format!("imbalance {epsilon} must be >= 0")));
    }
    let input_owner = contiguous_owner(model.n, p);
    let mut phases: Vec<Vec<u32>> = Vec::with_capacity(model.n_layers());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (k, w) in model.layers.iter().enumerate() {
        let prev = phases.last().unwrap_or(&input_owner);
        let h = PhaseHypergraph::build(w, prev)?;
        let parts = match scheme {
            Scheme::Hgp => {
                partition_phase(&h, p as usize, epsilon, seed.wrapping_add(k as u64 + 1))?.parts
            }
            Scheme::Random => random_phase(h.weights(), p as usize, epsilon, &mut rng),
        };
        phases.push(parts);
    }
    Ok(PartitionPlan {
        p,
        n: model.n,
        epsilon,
        scheme,
        input_owner,
        phases,
    })
}
