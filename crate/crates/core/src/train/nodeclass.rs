//! Semi-supervised node classification with early stopping.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{EpochRecord, Optimizer, RunMetrics};
use crate::autodiff::{AutodiffError, Csr, Tape, Tensor};
use crate::graph::{normalize_adjacency, Graph, Split};
use crate::model::{class_scores, drop_adjacency, InputFeatures, KgcnParams, ModelConfig, ModelError, Result};

fn accuracy(scores: &Tensor, rows: &[usize], labels: &[usize]) -> f64 {
    if rows.is_empty() {
        return f64::NAN;
    }
    let correct = rows
        .iter()
        .filter(|&&i| {
            let r = scores.row(i);
            let best = (0..r.len()).fold(0, |b, j| if r[j] > r[b] { j } else { b });
            best == labels[i]
        })
        .count();
    correct as f64 / rows.len() as f64
}

fn targets(rows: &[usize], labels: &[usize]) -> Vec<usize> {
    rows.iter().map(|&i| labels[i]).collect()
}

/// Evaluation pass without dropout: class scores and early-stopping loss.
fn evaluate(
    cfg: &ModelConfig,
    params: &KgcnParams,
    x: &InputFeatures,
    a_hat: &Arc<Csr>,
    rows: &[usize],
    labels: &[usize],
) -> Result<(Tensor, f64)> {
    let tape = Tape::new();
    let bound = params.bind(&tape);
    let scores = class_scores(cfg, &bound, x, a_hat, None)?;
    let loss = if rows.is_empty() { f64::NAN } else { scores.softmax_xent(rows, &targets(rows, labels))?.item()? };
    Ok(((*scores.value()).clone(), loss))
}

/// Trains on `split.train`, stops once the early-stopping loss has not
/// improved for `patience` epochs, and reports the checkpoint with the best
/// early-stopping accuracy.
pub fn train_nodeclass(g: &Graph, split: &Split, cfg: &ModelConfig) -> Result<RunMetrics> {
    cfg.validate()?;
    let x = g.features().ok_or_else(|| ModelError::Config("graph has no node features".into()))?.clone();
    let labels = g.labels().ok_or_else(|| ModelError::Config("graph has no labels".into()))?.to_vec();
    let classes = g.num_classes().unwrap_or(0);
    if classes < 2 {
        return Err(ModelError::Config("node classification needs at least two classes".into()));
    }
    if split.train.is_empty() || !split.is_disjoint(g.n()) {
        return Err(ModelError::Config("split must have training nodes and disjoint parts".into()));
    }
    let a_hat = Arc::new(normalize_adjacency(g, cfg.adjacency));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = KgcnParams::init(cfg, x.cols(), Some(classes), &mut rng)?;
    let x = params.input_features(&x)?;
    let mut opt = Optimizer::new(cfg.lr_euclidean, cfg.lr_curvature);
    let train_targets = targets(&split.train, &labels);
    let es_rows = if split.early_stop.is_empty() { &split.train } else { &split.early_stop };

    let mut metrics = RunMetrics::new("nodeclass", cfg.seed);
    let mut best: Option<(f64, f64, KgcnParams)> = None;
    let mut best_loss = f64::INFINITY;
    let mut stale = 0usize;
    for epoch in 0..cfg.epochs {
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let a_drop = Arc::new(drop_adjacency(&a_hat, cfg.dropout_adjacency, &mut rng));
        let scores = class_scores(cfg, &bound, &x, &a_drop, Some(&mut rng))?;
        let mut loss = scores.softmax_xent(&split.train, &train_targets)?;
        if cfg.l2_first_layer > 0.0 {
            for w in bound.first_layer_weights() {
                loss = loss.add(w.square().sum().scale(0.5 * cfg.l2_first_layer))?;
            }
        }
        let train_loss = loss.item()?;
        let grads = tape.backward(loss)?;
        let gs: Vec<Tensor> = bound.slots().iter().map(|&v| grads.wrt(v)).collect();
        if let Some(bad) = gs.iter().position(|t| !t.is_finite()) {
            return Err(AutodiffError::NonFinite(format!("gradient of parameter {bad} at epoch {epoch}")).into());
        }
        opt.step(&mut params, &gs)?;

        let (eval_scores, es_loss) = evaluate(cfg, &params, &x, &a_hat, es_rows, &labels)?;
        let es_acc = accuracy(&eval_scores, es_rows, &labels);
        let better = match &best {
            None => true,
            Some((acc, l, _)) => es_acc > *acc || (es_acc == *acc && es_loss < *l),
        };
        if better {
            best = Some((es_acc, es_loss, params.clone()));
            metrics.best_epoch = epoch;
        }
        metrics.history.push(EpochRecord { epoch, loss: train_loss, metric: es_acc, kappas: params.kappas() });
        if es_loss < best_loss {
            best_loss = es_loss;
            stale = 0;
        } else {
            stale += 1;
            if cfg.patience > 0 && stale >= cfg.patience {
                break;
            }
        }
    }
    let (es_acc, _, chosen) = best.expect("at least one epoch");
    let (scores, _) = evaluate(cfg, &chosen, &x, &a_hat, &[], &labels)?;
    metrics.epochs = metrics.history.len();
    metrics.final_loss = metrics.history.last().map(|r| r.loss).unwrap_or(f64::NAN);
    metrics.early_stop_accuracy = Some(es_acc);
    metrics.validation_accuracy = (!split.validation.is_empty()).then(|| accuracy(&scores, &split.validation, &labels));
    metrics.test_accuracy = (!split.test.is_empty()).then(|| accuracy(&scores, &split.test, &labels));
    metrics.kappas = chosen.kappas();
    metrics.final_kappas = params.kappas();
    Ok(metrics)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{community_features, gen_sbm, make_split};
    use crate::model::Family;

    fn sbm_task(seed: u64) -> (Graph, Split) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = gen_sbm(&[50, 50], 0.15, 0.01, &mut rng);
        let f = community_features(g.labels().unwrap(), 8, 0.5, &mut rng);
        let g = g.with_features(f).unwrap();
        let split = make_split(&g, 70, 10, 20, &mut rng).unwrap();
        (g, split)
    }

    #[test]
    fn accuracy_counts_argmax() {
        let s = Tensor::matrix(3, 2, vec![0.1, 0.9, 0.8, 0.2, 0.5, 0.4]).unwrap();
        assert_eq!(accuracy(&s, &[0, 1, 2], &[1, 0, 1]), 2.0 / 3.0);
    }

    #[test]
    fn short_run_learns_and_is_deterministic() {
        let (g, split) = sbm_task(0);
        let mut cfg = ModelConfig::nodeclass(Family::Hyperbolic);
        cfg.epochs = 80;
        let a = train_nodeclass(&g, &split, &cfg).unwrap();
        let b = train_nodeclass(&g, &split, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.test_accuracy.unwrap() > 0.8, "{a:?}");
        assert!(a.kappas[0] < 0.0);
    }

    #[test]
    fn patience_stops_early() {
        let (g, split) = sbm_task(1);
        let mut cfg = ModelConfig::nodeclass(Family::Euclidean);
        cfg.epochs = 2000;
        cfg.patience = 5;
        cfg.lr_euclidean = 0.5;
        let m = train_nodeclass(&g, &split, &cfg).unwrap();
        assert!(m.epochs < 2000);
    }

    #[test]
    fn missing_data_is_a_config_error() {
        let (g, split) = sbm_task(2);
        let bare = Graph::new(g.n(), g.edges().to_vec()).unwrap();
        let cfg = ModelConfig::nodeclass(Family::Euclidean);
        assert!(matches!(train_nodeclass(&bare, &split, &cfg), Err(ModelError::Config(_))));
    }
}
