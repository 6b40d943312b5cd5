//! Sampled parallelogram-law deviation as a graph curvature estimate.

use rand::seq::SliceRandom;
use rand::Rng;

use super::{bfs_all_pairs, DistanceMatrix, Graph, GraphError, Result};

/// Deviation from the parallelogram law for midpoint `m` of `b, c` seen from `a`,
/// given `d(a,m), d(b,c), d(a,b), d(a,c)`.
pub fn psi(d_am: f64, d_bc: f64, d_ab: f64, d_ac: f64) -> f64 {
    d_am / 2.0 + d_bc * d_bc / (8.0 * d_am) - (2.0 * d_ab * d_ab + 2.0 * d_ac * d_ac) / (4.0 * d_am)
}

fn psi_sample(d: &DistanceMatrix, m: usize, b: usize, c: usize, a: usize) -> Option<f64> {
    let am = d.get(a, m)?;
    let bc = d.get(b, c)?;
    let ab = d.get(a, b)?;
    let ac = d.get(a, c)?;
    (am > 0).then(|| psi(am as f64, bc as f64, ab as f64, ac as f64))
}

/// Curvature estimate `κ̂` with the per-node mean deviation. Nodes without
/// neighbours, or whose samples all hit unreachable references, get `None` and
/// are left out of `κ̂`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureEstimate {
    pub kappa_hat: f64,
    pub psi: Vec<Option<f64>>,
}

pub fn estimate_curvature<R: Rng + ?Sized>(g: &Graph, n_iter: usize, rng: &mut R) -> Result<CurvatureEstimate> {
    if g.n() < 2 {
        return Err(GraphError::InsufficientGraph(format!("{} node(s)", g.n())));
    }
    if n_iter == 0 {
        return Err(GraphError::InsufficientGraph("zero iterations".into()));
    }
    let d = bfs_all_pairs(g);
    let n = g.n();
    let mut per_node = Vec::with_capacity(n);
    for m in 0..n {
        let nbrs = g.neighbors(m);
        if nbrs.is_empty() {
            per_node.push(None);
            continue;
        }
        let (mut sum, mut count) = (0.0, 0usize);
        for _ in 0..n_iter {
            let b = *nbrs.choose(rng).expect("non-empty");
            let c = *nbrs.choose(rng).expect("non-empty");
            let mut a = rng.gen_range(0..n - 1);
            if a >= m {
                a += 1;
            }
            if let Some(v) = psi_sample(&d, m, b, c, a) {
                sum += v;
                count += 1;
            }
        }
        per_node.push((count > 0).then(|| sum / count as f64));
    }
    let valid: Vec<f64> = per_node.iter().flatten().copied().collect();
    if valid.is_empty() {
        return Err(GraphError::InsufficientGraph("no valid sample".into()));
    }
    let kappa_hat = valid.iter().sum::<f64>() / valid.len() as f64;
    Ok(CurvatureEstimate { kappa_hat, psi: per_node })
}
