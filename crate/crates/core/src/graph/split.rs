//! Train / early-stopping / validation / test node splits.

use rand::seq::SliceRandom;
use rand::Rng;

use super::{Graph, GraphError, Result};

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub early_stop: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn is_disjoint(&self, n: usize) -> bool {
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.early_stop).chain(&self.validation).chain(&self.test) {
            if i >= n || seen[i] {
                return false;
            }
            seen[i] = true;
        }
        true
    }
}

fn known_and_test<R: Rng + ?Sized>(g: &Graph, n_known: usize, rng: &mut R) -> Result<(Vec<usize>, Vec<usize>)> {
    if n_known > g.n() {
        return Err(GraphError::InfeasibleSplit(format!("n_known {n_known} exceeds {} nodes", g.n())));
    }
    let mut order: Vec<usize> = (0..g.n()).collect();
    order.shuffle(rng);
    let test = order.split_off(n_known);
    Ok((order, test))
}

/// A random known set of `n_known` nodes holds `per_label_train` training
/// nodes per class, then `early_stop_size` early-stopping nodes, with the rest
/// for validation. Unknown nodes form the test set.
pub fn make_split<R: Rng + ?Sized>(
    g: &Graph,
    n_known: usize,
    per_label_train: usize,
    early_stop_size: usize,
    rng: &mut R,
) -> Result<Split> {
    let labels = g.labels().ok_or_else(|| GraphError::InfeasibleSplit("graph has no labels".into()))?;
    let classes = g.num_classes().unwrap_or(0);
    let mut sizes = vec![0usize; classes];
    for &l in labels {
        sizes[l] += 1;
    }
    if let Some((c, &s)) = sizes.iter().enumerate().find(|(_, &s)| s < per_label_train) {
        return Err(GraphError::InfeasibleSplit(format!(
            "class {c} has {s} nodes, fewer than {per_label_train} per label"
        )));
    }
    if per_label_train * classes + early_stop_size > n_known {
        return Err(GraphError::InfeasibleSplit(format!(
            "{per_label_train}×{classes} training plus {early_stop_size} early-stopping nodes exceed n_known {n_known}"
        )));
    }
    let (known, test) = known_and_test(g, n_known, rng)?;
    let mut taken = vec![0usize; classes];
    let (mut train, mut rest) = (Vec::new(), Vec::new());
    for i in known {
        let l = labels[i];
        if taken[l] < per_label_train {
            taken[l] += 1;
            train.push(i);
        } else {
            rest.push(i);
        }
    }
    if let Some((c, &t)) = taken.iter().enumerate().find(|(_, &t)| t < per_label_train) {
        return Err(GraphError::InfeasibleSplit(format!(
            "known set holds only {t} nodes of class {c}, fewer than {per_label_train}"
        )));
    }
    let validation = rest.split_off(early_stop_size);
    Ok(Split { train, early_stop: rest, validation, test })
}

/// Like [`make_split`] but with a fixed training count drawn without regard to labels.
pub fn make_split_fixed<R: Rng + ?Sized>(
    g: &Graph,
    n_known: usize,
    n_train: usize,
    early_stop_size: usize,
    rng: &mut R,
) -> Result<Split> {
    if n_train + early_stop_size > n_known {
        return Err(GraphError::InfeasibleSplit(format!(
            "{n_train} training plus {early_stop_size} early-stopping nodes exceed n_known {n_known}"
        )));
    }
    let (mut known, test) = known_and_test(g, n_known, rng)?;
    let mut rest = known.split_off(n_train);
    let validation = rest.split_off(early_stop_size);
    Ok(Split { train: known, early_stop: rest, validation, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn labelled(n: usize, classes: usize) -> Graph {
        Graph::new(n, []).unwrap().with_labels((0..n).map(|i| i % classes).collect()).unwrap()
    }

    #[test]
    fn default_protocol_sizes() {
        let g = labelled(2708, 7);
        let s = make_split(&g, 1500, 20, 500, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(s.train.len(), 140);
        assert_eq!(s.early_stop.len(), 500);
        assert_eq!(s.validation.len(), 1500 - 140 - 500);
        assert_eq!(s.test.len(), 2708 - 1500);
        assert!(s.is_disjoint(g.n()));
        let labels = g.labels().unwrap();
        for c in 0..7 {
            assert_eq!(s.train.iter().filter(|&&i| labels[i] == c).count(), 20);
        }
    }

    #[test]
    fn airport_style() {
        let g = labelled(3188, 4);
        let s = make_split_fixed(&g, 2700, 2100, 300, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.early_stop.len()), (2100, 300, 300));
        assert_eq!(s.test.len(), 488);
        assert!(s.is_disjoint(g.n()));
    }

    #[test]
    fn infeasible_requests() {
        let g = labelled(30, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(matches!(make_split(&g, 30, 11, 0, &mut rng), Err(GraphError::InfeasibleSplit(_))));
        assert!(matches!(make_split(&g, 31, 1, 0, &mut rng), Err(GraphError::InfeasibleSplit(_))));
        assert!(matches!(make_split(&g, 10, 3, 5, &mut rng), Err(GraphError::InfeasibleSplit(_))));
        let unlabelled = Graph::new(5, []).unwrap();
        assert!(make_split(&unlabelled, 5, 1, 0, &mut rng).is_err());
        assert!(make_split_fixed(&g, 10, 8, 5, &mut rng).is_err());
    }

    #[test]
    fn deterministic_under_seed() {
        let g = labelled(100, 2);
        let a = make_split(&g, 60, 10, 20, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = make_split(&g, 60, 10, 20, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
    }
}
