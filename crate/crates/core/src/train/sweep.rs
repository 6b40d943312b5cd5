//! Distortion as a function of a fixed curvature.

use serde::{Deserialize, Serialize};

use super::train_distortion;
use crate::graph::Graph;
use crate::model::{ComponentSpec, Constraint, ModelConfig, ModelError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub kappa: f64,
    pub min_distortion: f64,
}

/// `n` equidistant values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// One distortion run per κ with a single non-trainable component. Every run
/// uses the seed of `base`, so rows differ only in the curvature.
pub fn kappa_sweep(g: &Graph, base: &ModelConfig, grid: &[f64]) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(ModelError::Config("empty curvature grid".into()));
    }
    grid.iter()
        .map(|&kappa| {
            let mut cfg = base.clone();
            cfg.components = vec![ComponentSpec::new(kappa, Constraint::Fixed)];
            let m = train_distortion(g, &cfg)?;
            Ok(SweepRow { kappa, min_distortion: m.best_distortion.unwrap_or(f64::NAN) })
        })
        .collect()
}
