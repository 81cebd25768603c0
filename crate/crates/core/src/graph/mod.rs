//! Attributed graphs, their normalized adjacency operator, dataset loaders
//! and run configuration.

mod config;
mod io;

pub use config::{CahInput, RunConfig};
pub use io::{
    load_dataset, load_dataset_dir, load_planetoid_content, load_planetoid_dir, save_dataset,
    DatasetMeta, EDGES_FILE, FEATURES_FILE, LABELS_FILE,
};

use crate::error::{Error, Result};
use crate::tensor::SparseCsr;

/// An undirected graph with binary node attributes and optional ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributedGraph {
    /// Binary symmetric adjacency, zero diagonal.
    adjacency: SparseCsr,
    /// Binary N×M node-attribute incidence.
    features: SparseCsr,
    labels: Option<Vec<usize>>,
    k_clusters: Option<usize>,
}

impl AttributedGraph {
    /// Builds a graph from undirected edges and (node, attribute) pairs.
    /// Edges are symmetrized and deduplicated; self-edges are dropped.
    pub fn new(
        n_nodes: usize,
        n_attrs: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        features: impl IntoIterator<Item = (usize, usize)>,
        labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        let mut coords = Vec::new();
        for (a, b) in edges {
            if a >= n_nodes || b >= n_nodes {
                return Err(Error::Input(format!(
                    "edge ({a},{b}) references a node outside 0..{n_nodes}"
                )));
            }
            if a != b {
                coords.push((a, b));
                coords.push((b, a));
            }
        }
        let adjacency = SparseCsr::binary(n_nodes, n_nodes, coords)?;
        let features = SparseCsr::binary(n_nodes, n_attrs, features)
            .map_err(|e| Error::Input(format!("features: {e}")))?;

        let k_clusters = match &labels {
            Some(l) => {
                if l.len() != n_nodes {
                    return Err(Error::Input(format!(
                        "{} labels for {n_nodes} nodes",
                        l.len()
                    )));
                }
                Some(l.iter().max().map_or(0, |m| m + 1))
            }
            None => None,
        };
        Ok(Self {
            adjacency,
            features,
            labels,
            k_clusters,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.adjacency.rows()
    }

    pub fn n_attrs(&self) -> usize {
        self.features.cols()
    }

    pub fn adjacency(&self) -> &SparseCsr {
        &self.adjacency
    }

    pub fn features(&self) -> &SparseCsr {
        &self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Number of ground-truth classes, when labels are present.
    pub fn k_clusters(&self) -> Option<usize> {
        self.k_clusters
    }

    /// Undirected edge count (each pair once).
    pub fn n_edges(&self) -> usize {
        self.adjacency.nnz() / 2
    }

    /// Undirected edges with `a < b`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.adjacency
            .iter()
            .filter(|&(a, b, _)| a < b)
            .map(|(a, b, _)| (a, b))
            .collect()
    }

    /// A copy with labels removed, for handing to the trainer.
    pub fn without_labels(&self) -> Self {
        Self {
            labels: None,
            k_clusters: None,
            ..self.clone()
        }
    }
}

/// `D^{-1/2} A' D^{-1/2}` with `A' = A + I` when `add_self_loops` is set.
/// Rows of nodes with zero degree are left empty.
pub fn normalize_adjacency(graph: &AttributedGraph, add_self_loops: bool) -> SparseCsr {
    let a = graph.adjacency();
    let n = a.rows();
    let loop_weight = if add_self_loops { 1.0 } else { 0.0 };
    let degree: Vec<f64> = a.row_sums().iter().map(|d| d + loop_weight).collect();
    let inv_sqrt: Vec<f64> = degree
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();

    let mut trip = Vec::with_capacity(a.nnz() + n);
    for (i, j, v) in a.iter() {
        trip.push((i, j, v * inv_sqrt[i] * inv_sqrt[j]));
    }
    if add_self_loops {
        for i in 0..n {
            trip.push((i, i, inv_sqrt[i] * inv_sqrt[i]));
        }
    }
    SparseCsr::from_triplets(n, n, trip).expect("indices come from the adjacency")
}
