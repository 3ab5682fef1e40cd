//! Graph representation, dataset containers and basic graph metrics.

mod io;
mod metrics;
mod split;

pub use io::{parse_native, parse_tudataset, write_native, write_native_string};
pub use metrics::{avg_closeness, bfs_distances, closeness, khop_neighbors};
pub use split::{make_splits, SplitPlan};

use ndarray::Array2;

use crate::error::{Error, Result};

/// Graph-level target.
#[derive(Debug, Clone, PartialEq)]
pub enum Label {
    /// Single class id in `[0, num_classes)`.
    Class(usize),
    /// One binary target per task; `None` marks an unlabeled task.
    Tasks(Vec<Option<bool>>),
}

impl Label {
    pub fn class(&self) -> Option<usize> {
        match self {
            Label::Class(c) => Some(*c),
            Label::Tasks(_) => None,
        }
    }
}

/// Immutable simple undirected graph with node features.
///
/// Edges are stored once as `(u, v)` with `u < v`, sorted and deduplicated.
/// Self-loops are never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    edge_weights: Option<Vec<f64>>,
    features: Array2<f64>,
    label: Label,
    adj: Vec<Vec<(usize, f64)>>,
}

impl Graph {
    /// Builds a graph from unweighted edges. Self-loops are dropped and
    /// duplicate (or reversed) edges collapse to one.
    pub fn new(
        num_nodes: usize,
        edges: &[(usize, usize)],
        features: Array2<f64>,
        label: Label,
    ) -> Result<Self> {
        let weighted: Vec<_> = edges.iter().map(|&(u, v)| (u, v, 1.0)).collect();
        Self::build(num_nodes, &weighted, false, features, label)
    }

    /// Builds a graph with explicit edge weights. For duplicated pairs the
    /// first weight wins.
    pub fn with_weights(
        num_nodes: usize,
        edges: &[(usize, usize, f64)],
        features: Array2<f64>,
        label: Label,
    ) -> Result<Self> {
        Self::build(num_nodes, edges, true, features, label)
    }

    /// Unit features (one column of ones) and class label 0.
    pub fn unlabeled(num_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        Self::new(
            num_nodes,
            edges,
            Array2::ones((num_nodes, 1)),
            Label::Class(0),
        )
    }

    fn build(
        num_nodes: usize,
        edges: &[(usize, usize, f64)],
        weighted: bool,
        features: Array2<f64>,
        label: Label,
    ) -> Result<Self> {
        if features.nrows() != num_nodes {
            return Err(Error::InvalidGraph(format!(
                "feature matrix has {} rows but graph has {} nodes",
                features.nrows(),
                num_nodes
            )));
        }
        let mut canon: Vec<(usize, usize, f64)> = Vec::with_capacity(edges.len());
        for &(u, v, w) in edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(Error::InvalidGraph(format!(
                    "edge ({u}, {v}) out of range for {num_nodes} nodes"
                )));
            }
            if !w.is_finite() {
                return Err(Error::InvalidGraph(format!(
                    "edge ({u}, {v}) has non-finite weight"
                )));
            }
            if u != v {
                canon.push((u.min(v), u.max(v), w));
            }
        }
        // stable sort keeps the first weight of duplicated pairs in front
        canon.sort_by_key(|&(u, v, _)| (u, v));
        canon.dedup_by_key(|e| (e.0, e.1));

        let mut adj = vec![Vec::new(); num_nodes];
        for &(u, v, w) in &canon {
            adj[u].push((v, w));
            adj[v].push((u, w));
        }
        for list in &mut adj {
            list.sort_by_key(|&(n, _)| n);
        }
        let edge_weights = weighted.then(|| canon.iter().map(|e| e.2).collect());
        Ok(Self {
            num_nodes,
            edges: canon.iter().map(|&(u, v, _)| (u, v)).collect(),
            edge_weights,
            features,
            label,
            adj,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_weights(&self) -> Option<&[f64]> {
        self.edge_weights.as_deref()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn label(&self) -> &Label {
        &self.label
    }

    /// Neighbors of `v` with edge weights, sorted by neighbor index.
    pub fn neighbors(&self, v: usize) -> &[(usize, f64)] {
        &self.adj[v]
    }

    pub fn neighbor_ids(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.adj[v].iter().map(|&(u, _)| u)
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adj[v].len()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adj[u].binary_search_by_key(&v, |&(n, _)| n).is_ok()
    }

    pub fn weight(&self, u: usize, v: usize) -> Option<f64> {
        self.adj[u]
            .binary_search_by_key(&v, |&(n, _)| n)
            .ok()
            .map(|i| self.adj[u][i].1)
    }

    /// Copy of this graph with a different feature matrix.
    pub fn with_features(&self, features: Array2<f64>) -> Result<Self> {
        if features.nrows() != self.num_nodes {
            return Err(Error::InvalidGraph(format!(
                "feature matrix has {} rows but graph has {} nodes",
                features.nrows(),
                self.num_nodes
            )));
        }
        Ok(Self {
            features,
            ..self.clone()
        })
    }

    pub fn with_label(&self, label: Label) -> Self {
        Self {
            label,
            ..self.clone()
        }
    }

    /// Relabels nodes so that old node `v` becomes `perm[v]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.num_nodes {
            return Err(Error::InvalidArgument(format!(
                "permutation of length {} for {} nodes",
                perm.len(),
                self.num_nodes
            )));
        }
        let mut seen = vec![false; self.num_nodes];
        for &p in perm {
            if p >= self.num_nodes || std::mem::replace(&mut seen[p], true) {
                return Err(Error::InvalidArgument("not a permutation".into()));
            }
        }
        let mut features = Array2::zeros(self.features.raw_dim());
        for (v, &p) in perm.iter().enumerate() {
            features.row_mut(p).assign(&self.features.row(v));
        }
        let weights = self.edge_weights.as_deref();
        let edges: Vec<_> = self
            .edges
            .iter()
            .enumerate()
            .map(|(i, &(u, v))| (perm[u], perm[v], weights.map_or(1.0, |w| w[i])))
            .collect();
        Self::build(
            self.num_nodes,
            &edges,
            self.edge_weights.is_some(),
            features,
            self.label.clone(),
        )
    }

    /// Dense symmetric adjacency with edge weights, zero diagonal.
    pub fn dense_adjacency(&self) -> Array2<f64> {
        let mut a = Array2::zeros((self.num_nodes, self.num_nodes));
        for (u, list) in self.adj.iter().enumerate() {
            for &(v, w) in list {
                a[[u, v]] = w;
            }
        }
        a
    }
}

/// A named collection of graphs sharing one feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub num_classes: usize,
    graphs: Vec<Graph>,
}

impl Dataset {
    /// Checks the shared feature dimension and label ranges.
    ///
    /// `num_classes` counts tasks rather than classes when graphs carry
    /// [`Label::Tasks`].
    pub fn new(name: impl Into<String>, num_classes: usize, graphs: Vec<Graph>) -> Result<Self> {
        if let Some(first) = graphs.first() {
            let dim = first.feature_dim();
            for (i, g) in graphs.iter().enumerate() {
                if g.feature_dim() != dim {
                    return Err(Error::InvalidDataset(format!(
                        "graph {i} has feature dimension {} but graph 0 has {dim}",
                        g.feature_dim()
                    )));
                }
                match g.label() {
                    Label::Class(c) if *c >= num_classes => {
                        return Err(Error::InvalidDataset(format!(
                            "graph {i} has label {c} outside [0, {num_classes})"
                        )))
                    }
                    Label::Tasks(t) if t.len() != num_classes => {
                        return Err(Error::InvalidDataset(format!(
                            "graph {i} has {} tasks, expected {num_classes}",
                            t.len()
                        )))
                    }
                    _ => {}
                }
            }
        }
        Ok(Self {
            name: name.into(),
            num_classes,
            graphs,
        })
    }

    pub fn graphs(&self) -> &[Graph] {
        &self.graphs
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.graphs.first().map_or(0, Graph::feature_dim)
    }

    pub fn is_multilabel(&self) -> bool {
        matches!(self.graphs.first().map(Graph::label), Some(Label::Tasks(_)))
    }

    /// Sub-dataset with the graphs at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            name: self.name.clone(),
            num_classes: self.num_classes,
            graphs: indices.iter().map(|&i| self.graphs[i].clone()).collect(),
        }
    }
}
