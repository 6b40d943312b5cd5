//! Tape-recorded aggregation with a constant sparse weight matrix.

use std::sync::Arc;

use crate::autodiff::{AutodiffError, Csr, Result, Tensor, Var};
use crate::manifold::diff::{conformal_factor, exp0, exp_map, kappa_scale, log0, log_map, project};
use crate::manifold::GeometryError;

use super::COND_EPS;

/// `exp_0(log_0(X)·W)`.
pub fn right_matmul<'t>(x: Var<'t>, w: Var<'t>, kappa: Var<'t>) -> Result<Var<'t>> {
    exp0(log0(x, kappa)?.matmul(w)?, kappa)
}

/// Row-wise gyromidpoints of `X` with the rows of `A` as weights. Rows of `A`
/// without entries give the origin.
pub fn gyromidpoints<'t>(a: &Arc<Csr>, x: Var<'t>, kappa: Var<'t>) -> Result<Var<'t>> {
    let tape = x.tape();
    let lam = conformal_factor(x, kappa)?;
    let num = x.mul(lam)?.spmm(a)?;
    let den = lam.offset(-1.0).spmm(a)?;
    let k = kappa.item()?;
    let empty: Vec<f64> = (0..a.rows()).map(|i| if a.row(i).0.is_empty() { 1.0 } else { 0.0 }).collect();
    for (i, (&d, &e)) in den.value().data().iter().zip(&empty).enumerate() {
        if e == 0.0 && d.abs() < COND_EPS {
            let err = if k == 0.0 {
                GeometryError::ZeroWeight { row: Some(i) }
            } else {
                GeometryError::DegenerateMidpoint { row: Some(i), value: d }
            };
            return Err(AutodiffError::Geometry(err));
        }
    }
    let den = if empty.iter().any(|&e| e > 0.0) {
        den.add(tape.constant(Tensor::new(vec![a.rows(), 1], empty)?))?
    } else {
        den
    };
    let inner = project(num.div(den)?, kappa)?;
    kappa_scale(tape.scalar(0.5), inner, kappa)
}

/// `(Σ_j A_ij) ⊗ gyromidpoint(X; A_i•)` for every row.
pub fn left_matmul<'t>(a: &Arc<Csr>, x: Var<'t>, kappa: Var<'t>) -> Result<Var<'t>> {
    let m = gyromidpoints(a, x, kappa)?;
    let sums = x.tape().constant(Tensor::new(vec![a.rows(), 1], a.row_sums())?);
    kappa_scale(sums, m, kappa)
}

/// `exp_x(Σ α_i log_x(x_i))` for a single base point `x` of shape `[1, d]`.
pub fn tangential_agg<'t>(x: Var<'t>, points: Var<'t>, alpha: &[f64], kappa: Var<'t>) -> Result<Var<'t>> {
    let logs = log_map(x, points, kappa)?;
    let w = x.tape().constant(Tensor::new(vec![1, alpha.len()], alpha.to_vec())?);
    exp_map(x, w.matmul(logs)?, kappa)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agg::{self, PointMatrix, WeightRow};
    use crate::autodiff::{finite_diff, grad_error, Tape};
    use crate::manifold::{sample_point, Curvature, Point};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rows(rng: &mut ChaCha8Rng, n: usize, d: usize, k: f64) -> Tensor {
        let mut data = Vec::new();
        for _ in 0..n {
            data.extend(sample_point(rng, d, k, 0.9).unwrap().coords().iter());
        }
        Tensor::matrix(n, d, data).unwrap()
    }

    fn adjacency() -> Arc<Csr> {
        Arc::new(
            Csr::from_triplets(
                4,
                4,
                vec![(0, 0, 0.5), (0, 1, 0.5), (1, 0, 0.3), (1, 1, 0.4), (1, 2, 0.3), (2, 3, 1.2), (3, 3, 0.7)],
            )
            .unwrap(),
        )
    }

    #[test]
    fn matches_plain_aggregation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for &k in &[-0.9, 0.0, 0.6] {
            let xt = random_rows(&mut rng, 4, 3, k);
            let wt = Tensor::matrix(3, 2, (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let tape = Tape::new();
            let (x, w, kv) = (tape.constant(xt.clone()), tape.constant(wt.clone()), tape.scalar(k));
            let pm = PointMatrix::new(xt.to_dmatrix(), Curvature::new(k).unwrap()).unwrap();

            let r = right_matmul(x, w, kv).unwrap().value().to_dmatrix();
            let expect = agg::right_matmul(&pm, &wt.to_dmatrix()).unwrap();
            assert!((r - expect.coords()).amax() < 1e-13);

            let a = adjacency();
            let l = left_matmul(&a, x, kv).unwrap().value().to_dmatrix();
            let expect = agg::left_matmul(&a.to_dense().to_dmatrix(), &pm).unwrap();
            assert!((l - expect.coords()).amax() < 1e-13);

            let alpha = [0.2, 0.5, 0.1, 0.4];
            let base = tape.constant(Tensor::matrix(1, 3, xt.row(0).to_vec()).unwrap());
            let t = tangential_agg(base, x, &alpha, kv).unwrap().value().to_dmatrix();
            let p = Point::from_slice(xt.row(0), k).unwrap();
            let expect = agg::tangential_agg(&p, &pm, &WeightRow::new(alpha.to_vec()).unwrap()).unwrap();
            assert!((t.row(0).transpose() - expect.coords()).amax() < 1e-13);
        }
    }

    #[test]
    fn empty_rows_and_degenerate_rows() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::matrix(2, 2, vec![0.5, 0.0, 2.0, 0.0]).unwrap());
        let a = Arc::new(Csr::from_triplets(2, 2, vec![(1, 0, 1.0), (1, 1, 1.0)]).unwrap());
        let err = left_matmul(&a, x, tape.scalar(1.0)).unwrap_err();
        assert!(matches!(err, AutodiffError::Geometry(GeometryError::DegenerateMidpoint { row: Some(1), .. })));
        let a = Arc::new(Csr::from_triplets(2, 2, vec![(1, 0, 1.0)]).unwrap());
        let out = left_matmul(&a, x, tape.scalar(-0.1)).unwrap().value().to_dmatrix();
        assert_eq!(out.row(0).amax(), 0.0);
        assert_eq!(agg::empty_rows(&a.to_dense().to_dmatrix()), vec![0]);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for &k in &[-1.0, -1e-3, 1e-3, 0.7] {
            let xt = random_rows(&mut rng, 4, 3, k);
            let wt = Tensor::matrix(3, 3, (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let a = adjacency();
            let alpha = [0.3, 0.2, 0.4, 0.1];
            let tape = Tape::new();
            let (x, w, kv) = (tape.leaf(xt.clone()), tape.leaf(wt.clone()), tape.leaf(Tensor::scalar(k)));
            let h = right_matmul(x, w, kv).unwrap();
            let l = left_matmul(&a, h, kv).unwrap();
            let sel = Arc::new(Csr::from_triplets(1, 4, vec![(0, 2, 1.0)]).unwrap());
            let base = x.spmm(&sel).unwrap();
            let t = tangential_agg(base, l, &alpha, kv).unwrap();
            let loss = l.square().sum().add(t.sum()).unwrap();
            let g = tape.backward(loss).unwrap();
            let eval = |xt: &Tensor, wt: &Tensor, kt: f64| -> f64 {
                let tape = Tape::new();
                let (x, w, kv) = (tape.constant(xt.clone()), tape.constant(wt.clone()), tape.scalar(kt));
                let h = right_matmul(x, w, kv).unwrap();
                let l = left_matmul(&a, h, kv).unwrap();
                let base = x.spmm(&sel).unwrap();
                let t = tangential_agg(base, l, &alpha, kv).unwrap();
                l.square().sum().add(t.sum()).unwrap().item().unwrap()
            };
            let gx = finite_diff(|t| eval(t, &wt, k), &xt, 1e-6);
            let gw = finite_diff(|t| eval(&xt, t, k), &wt, 1e-6);
            let gk = finite_diff(|t| eval(&xt, &wt, t.data()[0]), &Tensor::vector(vec![k]), 1e-6);
            assert!(grad_error(&g.wrt(x), &gx, 1e-3) < 1e-5, "x at {k}");
            assert!(grad_error(&g.wrt(w), &gw, 1e-3) < 1e-5, "w at {k}");
            let gkv = Tensor::vector(vec![g.wrt(kv).item().unwrap()]);
            assert!(grad_error(&gkv, &gk, 1e-3) < 1e-5, "kappa at {k}: {gkv:?} vs {gk:?}");
        }
    }
}
