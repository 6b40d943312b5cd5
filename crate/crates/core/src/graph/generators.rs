//! Deterministic and seeded synthetic graphs.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Graph;
use crate::autodiff::Tensor;

/// Full `branching`-ary tree of the given depth, numbered breadth-first.
pub fn gen_balanced_tree(depth: usize, branching: usize) -> Graph {
    let mut n = 1usize;
    let mut level = 1usize;
    for _ in 0..depth {
        level *= branching;
        n += level;
    }
    let edges = (1..n).map(|v| ((v - 1) / branching.max(1), v));
    Graph::new(n, edges).expect("tree indices in range")
}

pub fn path_graph(n: usize) -> Graph {
    Graph::new(n, (1..n).map(|i| (i - 1, i))).expect("path indices in range")
}

/// Path with a closing edge.
pub fn cycle_graph(n: usize) -> Graph {
    let path = path_graph(n);
    let mut edges = path.edges().to_vec();
    if n >= 3 {
        edges.push((0, n - 1));
    }
    Graph::new(n, edges).expect("cycle indices in range")
}

pub fn complete_graph(n: usize) -> Graph {
    Graph::new(n, (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j)))).expect("indices in range")
}

/// Centre 0 joined to `leaves` leaves.
pub fn star_graph(leaves: usize) -> Graph {
    Graph::new(leaves + 1, (1..=leaves).map(|i| (0, i))).expect("indices in range")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeometricKind {
    /// Unit square with wrap-around distance.
    Torus,
    /// Unit sphere with great-circle distance.
    Sphere,
}

/// Random geometric graph: an edge joins points closer than `radius`.
pub fn gen_geometric_graph<R: Rng + ?Sized>(kind: GeometricKind, n: usize, radius: f64, rng: &mut R) -> Graph {
    let pts: Vec<[f64; 3]> = (0..n)
        .map(|_| match kind {
            GeometricKind::Torus => [rng.gen::<f64>(), rng.gen::<f64>(), 0.0],
            GeometricKind::Sphere => loop {
                let v: [f64; 3] = [
                    StandardNormal.sample(rng),
                    StandardNormal.sample(rng),
                    StandardNormal.sample(rng),
                ];
                let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                if norm > 1e-12 {
                    break [v[0] / norm, v[1] / norm, v[2] / norm];
                }
            },
        })
        .collect();
    let metric = |p: &[f64; 3], q: &[f64; 3]| -> f64 {
        match kind {
            GeometricKind::Torus => {
                let wrap = |a: f64, b: f64| {
                    let d = (a - b).abs();
                    d.min(1.0 - d)
                };
                wrap(p[0], q[0]).hypot(wrap(p[1], q[1]))
            }
            GeometricKind::Sphere => (p[0] * q[0] + p[1] * q[1] + p[2] * q[2]).clamp(-1.0, 1.0).acos(),
        }
    };
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if metric(&pts[i], &pts[j]) < radius {
                edges.push((i, j));
            }
        }
    }
    Graph::new(n, edges).expect("indices in range")
}

/// Expected edge count of a random geometric graph for small radii.
pub fn expected_geometric_edges(kind: GeometricKind, n: usize, radius: f64) -> f64 {
    let pairs = n as f64 * (n as f64 - 1.0) / 2.0;
    let p = match kind {
        GeometricKind::Torus => PI * radius * radius,
        GeometricKind::Sphere => (1.0 - radius.min(PI).cos()) / 2.0,
    };
    pairs * p.min(1.0)
}

/// Stochastic block model with community labels `0..sizes.len()`.
pub fn gen_sbm<R: Rng + ?Sized>(sizes: &[usize], p_in: f64, p_out: f64, rng: &mut R) -> Graph {
    let labels: Vec<usize> = sizes.iter().enumerate().flat_map(|(c, &s)| std::iter::repeat(c).take(s)).collect();
    let n = labels.len();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if labels[i] == labels[j] { p_in } else { p_out };
            if rng.gen::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    Graph::new(n, edges).and_then(|g| g.with_labels(labels)).expect("labels match node count")
}

/// Community indicator plus Gaussian noise of standard deviation `noise`, in
/// `dim ≥ num_classes` columns.
pub fn community_features<R: Rng + ?Sized>(labels: &[usize], dim: usize, noise: f64, rng: &mut R) -> Tensor {
    let mut data = Vec::with_capacity(labels.len() * dim);
    for &l in labels {
        for j in 0..dim {
            let z: f64 = StandardNormal.sample(rng);
            data.push(if j == l { 1.0 } else { 0.0 } + noise * z);
        }
    }
    Tensor::matrix(labels.len(), dim, data).expect("finite features")
}

/// `n × n` identity used as 1-hot node features.
pub fn one_hot(n: usize) -> Tensor {
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        data[i * n + i] = 1.0;
    }
    Tensor::matrix(n, n, data).expect("finite")
}
