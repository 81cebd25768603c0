//! Planted-partition attributed graphs with known block labels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::AttributedGraph;

/// Stochastic block model with block-indicative binary attributes.
///
/// Nodes are split into contiguous, near-equal blocks. Each block owns
/// `attrs_per_block` attributes that its members switch on with
/// probability `attr_on`; every other attribute is on with `attr_noise`.
#[derive(Clone, Debug, PartialEq)]
pub struct PlantedPartition {
    pub n_nodes: usize,
    pub blocks: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub attrs_per_block: usize,
    pub attr_on: f64,
    pub attr_noise: f64,
}

impl Default for PlantedPartition {
    fn default() -> Self {
        Self {
            n_nodes: 300,
            blocks: 3,
            p_in: 0.2,
            p_out: 0.01,
            attrs_per_block: 10,
            attr_on: 0.3,
            attr_noise: 0.02,
        }
    }
}

impl PlantedPartition {
    pub fn block_of(&self, node: usize) -> usize {
        node * self.blocks / self.n_nodes
    }

    pub fn generate(&self, seed: u64) -> Result<AttributedGraph> {
        let probs = [self.p_in, self.p_out, self.attr_on, self.attr_noise];
        if self.blocks == 0 || self.n_nodes < self.blocks || probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Input(format!("invalid planted partition {self:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.n_nodes;
        let labels: Vec<usize> = (0..n).map(|i| self.block_of(i)).collect();
        let mut edges = Vec::new();
        for a in 0..n {
            for b in (a + 1)..n {
                let p = if labels[a] == labels[b] { self.p_in } else { self.p_out };
                if rng.random::<f64>() < p {
                    edges.push((a, b));
                }
            }
        }
        let m = self.blocks * self.attrs_per_block;
        let mut features = Vec::new();
        for (i, &block) in labels.iter().enumerate() {
            for attr in 0..m {
                let own = attr / self.attrs_per_block.max(1) == block;
                let p = if own { self.attr_on } else { self.attr_noise };
                if rng.random::<f64>() < p {
                    features.push((i, attr));
                }
            }
        }
        AttributedGraph::new(n, m, edges, features, Some(labels))
    }
}
