//! Optimisers, losses and experiment drivers.

mod distortion;
mod nodeclass;
mod optim;
mod sweep;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use distortion::{distortion_loss, distortion_with_grads, train_distortion, PairSet};
pub use nodeclass::train_nodeclass;
pub use optim::{Adam, Optimizer};
pub use sweep::{kappa_sweep, linspace, SweepRow};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    /// Best distortion so far, or early-stopping accuracy.
    pub metric: f64,
    pub kappas: Vec<f64>,
}

/// Outcome of one training run. Wall-clock time is left to the caller so
/// that equal seeds give equal values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub task: String,
    pub seed: u64,
    pub epochs: usize,
    pub best_epoch: usize,
    pub final_loss: f64,
    pub best_distortion: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub validation_accuracy: Option<f64>,
    pub early_stop_accuracy: Option<f64>,
    /// Curvatures of the reported checkpoint.
    pub kappas: Vec<f64>,
    /// Curvatures after the last epoch.
    pub final_kappas: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub history: Vec<EpochRecord>,
}

impl RunMetrics {
    pub fn new(task: &str, seed: u64) -> Self {
        Self {
            task: task.into(),
            seed,
            epochs: 0,
            best_epoch: 0,
            final_loss: f64::NAN,
            best_distortion: None,
            test_accuracy: None,
            validation_accuracy: None,
            early_stop_accuracy: None,
            kappas: Vec::new(),
            final_kappas: Vec::new(),
            history: Vec::new(),
        }
    }

    /// Per-epoch table: `epoch,loss,metric,kappa_0,…`.
    pub fn history_csv(&self) -> String {
        let k = self.history.first().map_or(0, |r| r.kappas.len());
        let mut s = String::from("epoch,loss,metric");
        for i in 0..k {
            s.push_str(&format!(",kappa_{i}"));
        }
        s.push('\n');
        for r in &self.history {
            s.push_str(&format!("{},{},{}", r.epoch, r.loss, r.metric));
            for v in &r.kappas {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
        s
    }
}

/// Mean and percentile interval of the mean from `resamples` bootstrap draws.
pub fn bootstrap_ci<R: Rng + ?Sized>(values: &[f64], resamples: usize, level: f64, rng: &mut R) -> Option<(f64, f64, f64)> {
    if values.is_empty() || resamples == 0 || !(0.0..1.0).contains(&level) {
        return None;
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.gen_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    let at = |q: f64| means[((q * resamples as f64).floor() as usize).min(resamples - 1)];
    Some((mean, at(tail), at(1.0 - tail)))
}
