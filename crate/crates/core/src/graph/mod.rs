//! Graphs: construction, ingestion, normalisation, shortest paths, synthetic
//! generators, curvature estimation and data splits.

mod curvature;
mod generators;
mod io;
mod split;

use std::collections::VecDeque;

use thiserror::Error;

use crate::autodiff::{Csr, Tensor};

pub use curvature::{estimate_curvature, psi, CurvatureEstimate};
pub use generators::{
    community_features, complete_graph, cycle_graph, gen_balanced_tree, gen_geometric_graph, gen_sbm, one_hot,
    expected_geometric_edges, path_graph, star_graph, GeometricKind,
};
pub use io::{load_graph, write_edges, write_features, write_labels};
pub use split::{make_split, make_split_fixed, Split};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("parse error at {path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("node index {index} out of range for {n} nodes{}", .context)]
    Index { index: usize, n: usize, context: String },
    #[error("io error on {path}: {msg}")]
    Io { path: String, msg: String },
    #[error("insufficient graph: {0}")]
    InsufficientGraph(String),
    #[error("infeasible split: {0}")]
    InfeasibleSplit(String),
    #[error("invalid graph data: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, GraphError>;

/// Undirected simple graph with optional node features and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
    adj: Vec<Vec<usize>>,
    features: Option<Tensor>,
    labels: Option<Vec<usize>>,
    num_classes: Option<usize>,
}

impl Graph {
    /// Builds from an edge list; duplicates collapse and self-loops are dropped.
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut list = Vec::new();
        for (u, v) in edges {
            for x in [u, v] {
                if x >= n {
                    return Err(GraphError::Index { index: x, n, context: String::new() });
                }
            }
            if u != v {
                list.push((u.min(v), u.max(v)));
            }
        }
        list.sort_unstable();
        list.dedup();
        let mut adj = vec![Vec::new(); n];
        for &(u, v) in &list {
            adj[u].push(v);
            adj[v].push(u);
        }
        for a in &mut adj {
            a.sort_unstable();
        }
        Ok(Self { n, edges: list, adj, features: None, labels: None, num_classes: None })
    }

    pub fn with_features(mut self, features: Tensor) -> Result<Self> {
        if features.shape().len() != 2 || features.rows() != self.n {
            return Err(GraphError::Invalid(format!(
                "features of shape {:?} for {} nodes",
                features.shape(),
                self.n
            )));
        }
        self.features = Some(features);
        Ok(self)
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.n {
            return Err(GraphError::Invalid(format!("{} labels for {} nodes", labels.len(), self.n)));
        }
        self.num_classes = labels.iter().max().map(|m| m + 1);
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adj[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adj[i].len()
    }

    pub fn mean_degree(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        2.0 * self.edges.len() as f64 / self.n as f64
    }

    pub fn features(&self) -> Option<&Tensor> {
        self.features.as_ref()
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn num_classes(&self) -> Option<usize> {
        self.num_classes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdjacencyMode {
    /// `D̃^{−1/2} Ã D̃^{−1/2}`
    Symmetric,
    /// `D̃^{−1} Ã`, rows sum to one
    Left,
    /// `Ã D̃^{−1}`, columns sum to one
    Right,
}

/// Normalised adjacency of `Ã = A + I`.
pub fn normalize_adjacency(g: &Graph, mode: AdjacencyMode) -> Csr {
    let deg: Vec<f64> = (0..g.n).map(|i| (g.degree(i) + 1) as f64).collect();
    let mut trip = Vec::with_capacity(g.n + 2 * g.edges.len());
    for i in 0..g.n {
        trip.push((i, i));
        trip.extend(g.adj[i].iter().map(|&j| (i, j)));
    }
    let trip = trip
        .into_iter()
        .map(|(i, j)| {
            let v = match mode {
                AdjacencyMode::Symmetric => 1.0 / (deg[i] * deg[j]).sqrt(),
                AdjacencyMode::Left => 1.0 / deg[i],
                AdjacencyMode::Right => 1.0 / deg[j],
            };
            (i, j, v)
        })
        .collect();
    Csr::from_triplets(g.n, g.n, trip).expect("indices come from the graph")
}

/// All-pairs hop distances; unreachable pairs hold [`DistanceMatrix::UNREACHABLE`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<u32>,
}

impl DistanceMatrix {
    pub const UNREACHABLE: u32 = u32::MAX;

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn raw(&self, i: usize, j: usize) -> u32 {
        self.data[i * self.n + j]
    }

    pub fn get(&self, i: usize, j: usize) -> Option<u32> {
        let d = self.raw(i, j);
        (d != Self::UNREACHABLE).then_some(d)
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    /// Number of unordered pairs `i < j` that are connected.
    pub fn reachable_pairs(&self) -> usize {
        (0..self.n).map(|i| self.row(i)[i + 1..].iter().filter(|&&d| d != Self::UNREACHABLE).count()).sum()
    }

    pub fn diameter(&self) -> u32 {
        self.data.iter().filter(|&&d| d != Self::UNREACHABLE).copied().max().unwrap_or(0)
    }
}

/// Breadth-first search from every node.
pub fn bfs_all_pairs(g: &Graph) -> DistanceMatrix {
    let n = g.n;
    let mut data = vec![DistanceMatrix::UNREACHABLE; n * n];
    let mut queue = VecDeque::new();
    for s in 0..n {
        let row = &mut data[s * n..(s + 1) * n];
        row[s] = 0;
        queue.push_back(s);
        while let Some(u) = queue.pop_front() {
            let du = row[u];
            for &v in &g.adj[u] {
                if row[v] == DistanceMatrix::UNREACHABLE {
                    row[v] = du + 1;
                    queue.push_back(v);
                }
            }
        }
    }
    DistanceMatrix { n, data }
}
