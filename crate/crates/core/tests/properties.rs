use kgcn_core::graph::{
    bfs_all_pairs, gen_sbm, make_split, make_split_fixed, normalize_adjacency, AdjacencyMode, Graph,
};
use kgcn_core::manifold::{distance, exp_map, kappa_add, kappa_scale, log_map, Curvature, Point};
use nalgebra::DVector;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn curvature() -> impl Strategy<Value = f64> {
    prop_oneof![Just(0.0), (0.05f64..2.0).prop_map(|k| -k), 0.05f64..2.0]
}

/// A point with norm at most `0.7/√|κ|` (or 2 when κ = 0).
fn point(k: f64, dir: [f64; 3], t: f64) -> Point {
    let v = DVector::from_column_slice(&dir);
    let n = v.norm().max(1e-9);
    let r = if k == 0.0 { 2.0 } else { 0.7 / k.abs().sqrt() };
    Point::new(v * (t * r / n), Curvature::new(k).unwrap()).unwrap()
}

fn unit_cube() -> impl Strategy<Value = [f64; 3]> {
    [-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0]
}

/// Length scale of the model at curvature `k`.
fn scale(k: f64) -> f64 {
    if k == 0.0 {
        1.0
    } else {
        1.0 / k.abs().sqrt()
    }
}

proptest! {
    #[test]
    fn left_cancellation(k in curvature(), a in unit_cube(), b in unit_cube(), s in 0.0f64..1.0, t in 0.0f64..1.0) {
        let (x, y) = (point(k, a, s), point(k, b, t));
        let back = kappa_add(&x, &kappa_add(&x.neg(), &y).unwrap()).unwrap();
        prop_assert!((back.coords() - y.coords()).norm() <= 1e-10 * scale(k));
    }

    #[test]
    fn distance_is_a_metric(
        k in curvature(),
        a in unit_cube(), b in unit_cube(), c in unit_cube(),
        s in 0.0f64..1.0, t in 0.0f64..1.0, u in 0.0f64..1.0,
    ) {
        let (x, y, z) = (point(k, a, s), point(k, b, t), point(k, c, u));
        let tol = 1e-10 * scale(k);
        prop_assert_eq!(distance(&x, &x).unwrap(), 0.0);
        prop_assert!((distance(&x, &y).unwrap() - distance(&y, &x).unwrap()).abs() <= tol);
        prop_assert!(distance(&x, &y).unwrap() >= 0.0);
        prop_assert!(distance(&x, &z).unwrap() <= distance(&x, &y).unwrap() + distance(&y, &z).unwrap() + tol);
    }

    #[test]
    fn exp_inverts_log(k in curvature(), a in unit_cube(), b in unit_cube(), s in 0.0f64..1.0, t in 0.0f64..1.0) {
        let (x, y) = (point(k, a, s), point(k, b, t));
        let back = exp_map(&x, &log_map(&x, &y).unwrap()).unwrap();
        prop_assert!((back.coords() - y.coords()).norm() <= 1e-9 * scale(k));
    }

    #[test]
    fn scaling_multiplies_distance_to_origin(k in curvature(), a in unit_cube(), s in 0.0f64..1.0, r in -1.5f64..1.5) {
        let x = point(k, a, s);
        let o = Point::origin(3, x.kappa());
        let lhs = distance(&o, &kappa_scale(r, &x).unwrap()).unwrap();
        prop_assert!((lhs - r.abs() * distance(&o, &x).unwrap()).abs() <= 1e-10 * scale(k));
    }

    #[test]
    fn splits_partition_the_nodes(seed in any::<u64>(), n_known in 40usize..80, per_label in 1usize..10, early in 0usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = gen_sbm(&[50, 50], 0.1, 0.01, &mut rng);
        let s = make_split(&g, n_known, per_label, early, &mut rng).unwrap();
        prop_assert!(s.is_disjoint(g.n()));
        prop_assert_eq!(s.train.len() + s.early_stop.len() + s.validation.len(), n_known);
        prop_assert_eq!(s.train.len(), 2 * per_label);
        prop_assert_eq!(s.early_stop.len(), early);
        prop_assert_eq!(s.test.len(), g.n() - n_known);
        let f = make_split_fixed(&g, n_known, per_label, early, &mut rng).unwrap();
        prop_assert!(f.is_disjoint(g.n()));
        prop_assert_eq!(f.train.len(), per_label);
    }

    #[test]
    fn adjacency_normalisation(edges in proptest::collection::vec((0usize..12, 0usize..12), 0..40)) {
        let g = Graph::new(12, edges.into_iter().filter(|(u, v)| u != v)).unwrap();
        let left = normalize_adjacency(&g, AdjacencyMode::Left).to_dense();
        for i in 0..12 {
            prop_assert!((left.row(i).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
        let sym = normalize_adjacency(&g, AdjacencyMode::Symmetric).to_dense();
        for i in 0..12 {
            for j in 0..12 {
                prop_assert_eq!(sym.row(i)[j], sym.row(j)[i]);
            }
        }
    }

    #[test]
    fn shortest_paths_are_symmetric(edges in proptest::collection::vec((0usize..10, 0usize..10), 0..30)) {
        let g = Graph::new(10, edges.into_iter().filter(|(u, v)| u != v)).unwrap();
        let d = bfs_all_pairs(&g);
        for i in 0..10 {
            prop_assert_eq!(d.get(i, i), Some(0));
            for j in 0..10 {
                prop_assert_eq!(d.get(i, j), d.get(j, i));
                for &k in g.neighbors(j) {
                    if let (Some(a), Some(b)) = (d.get(i, j), d.get(i, k)) {
                        prop_assert!(a.abs_diff(b) <= 1);
                    }
                }
            }
        }
    }
}
