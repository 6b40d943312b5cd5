//! Tape-level building blocks of a κ-GCN.

use std::sync::Arc;

use rand::Rng;

use crate::agg::diff::{left_matmul, right_matmul};
use crate::autodiff::{Csr, Result, Tensor, Var};
use crate::manifold::diff::{conformal_factor, dot, exp0, kappa_add, log0, sq_norm};

/// Pointwise activation used inside the Möbius nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Nonlinearity {
    Identity,
    Relu,
    Tanh,
}

impl Nonlinearity {
    pub fn apply<'t>(self, x: Var<'t>) -> Var<'t> {
        match self {
            Nonlinearity::Identity => x,
            Nonlinearity::Relu => x.relu(),
            Nonlinearity::Tanh => x.tanh(),
        }
    }
}

/// Scales raw features so the largest row norm is `1/(2√|κ|)`. Identity at
/// κ = 0 and for all-zero input.
pub fn preprocess_features<'t>(x: Var<'t>, kappa: Var<'t>) -> Result<Var<'t>> {
    let k = kappa.item()?;
    let norms = x.norm2();
    let nv = norms.value();
    let Some((top, &max)) = nv.data().iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)) else {
        return Ok(x);
    };
    if k == 0.0 || max == 0.0 {
        return Ok(x);
    }
    let mut pick = vec![0.0; nv.len()];
    pick[top] = 1.0;
    let pick = x.tape().constant(Tensor::new(nv.shape().to_vec(), pick)?);
    let s = kappa.abs().sqrt()?.mul(norms.mul(pick)?.sum())?.scale(2.0);
    x.div(s)
}

/// Inverted dropout mask with keep probability `1 − rate`.
pub fn dropout_mask<R: Rng + ?Sized>(shape: &[usize], rate: f64, rng: &mut R) -> Tensor {
    let n: usize = shape.iter().product();
    let keep = 1.0 / (1.0 - rate);
    let data = (0..n).map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep }).collect();
    Tensor::new(shape.to_vec(), data).expect("finite mask")
}

/// `exp_0(σ(log_0(x)))`, optionally masking the tangent activations.
pub fn mobius_nonlin<'t>(x: Var<'t>, sigma: Nonlinearity, mask: Option<&Tensor>, kappa: Var<'t>) -> Result<Var<'t>> {
    let mut v = sigma.apply(log0(x, kappa)?);
    if let Some(m) = mask {
        v = v.mul(x.tape().constant(m.clone()))?;
    }
    exp0(v, kappa)
}

/// `σ^{⊗κ}(Â ⊠ (H ⊗ W))`. With the identity and no mask the outer map is skipped.
pub fn kgcn_layer<'t>(
    h: Var<'t>,
    w: Var<'t>,
    a_hat: &Arc<Csr>,
    sigma: Nonlinearity,
    mask: Option<&Tensor>,
    kappa: Var<'t>,
) -> Result<Var<'t>> {
    aggregate(right_matmul(h, w, kappa)?, a_hat, sigma, mask, kappa)
}

/// The part of [`kgcn_layer`] after the right multiplication.
pub(crate) fn aggregate<'t>(
    hw: Var<'t>,
    a_hat: &Arc<Csr>,
    sigma: Nonlinearity,
    mask: Option<&Tensor>,
    kappa: Var<'t>,
) -> Result<Var<'t>> {
    let agg = left_matmul(a_hat, hw, kappa)?;
    if sigma == Nonlinearity::Identity && mask.is_none() {
        return Ok(agg);
    }
    mobius_nonlin(agg, sigma, mask, kappa)
}

/// Smallest admissible `‖a_k‖` in the logit denominator.
pub const MIN_NORMAL: f64 = 1e-15;

/// Signed scaled distances to the K hyperplanes `{x : ⟨−p_k ⊕ x, a_k⟩ = 0}`,
/// shape `[n, K]` for `h: [n, d]`, `a, p: [K, d]`.
pub fn kappa_logits<'t>(h: Var<'t>, a: Var<'t>, p: Var<'t>, kappa: Var<'t>) -> Result<Var<'t>> {
    let tape = h.tape();
    let classes = a.value().rows();
    let mut cols = Vec::with_capacity(classes);
    for k in 0..classes {
        let sel = Arc::new(Csr::from_triplets(1, classes, vec![(0, k, 1.0)])?);
        let ak = a.spmm(&sel)?;
        let pk = p.spmm(&sel)?;
        let z = kappa_add(pk.neg(), h, kappa)?;
        let an = ak.norm2().clamp(MIN_NORMAL, f64::INFINITY);
        let den = sq_norm(z).mul(kappa)?.offset(1.0).mul(an)?;
        let arg = dot(z, ak)?.scale(2.0).div(den)?;
        let scale = conformal_factor(pk, kappa)?.mul(an)?;
        cols.push(arg.asin_k(kappa)?.mul(scale)?);
    }
    tape.concat_cols(&cols)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agg::{self, PointMatrix};
    use crate::autodiff::Tape;
    use crate::manifold::{self as m, Curvature, Point};
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn preprocessing_examples() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::matrix(2, 2, vec![4.0, 0.0, 1.0, 1.0]).unwrap());
        let out = preprocess_features(x, tape.scalar(-1.0)).unwrap().value();
        assert_eq!(out.row(0), &[0.5, 0.0]);
        let out = preprocess_features(x, tape.scalar(0.0)).unwrap().value();
        assert_eq!(out.data(), x.value().data());
        let z = tape.constant(Tensor::zeros(&[3, 2]));
        assert_eq!(preprocess_features(z, tape.scalar(-2.0)).unwrap().value().max_abs(), 0.0);
        let out = preprocess_features(x, tape.scalar(-4.0)).unwrap().value();
        let max = (0..2).map(|i| out.row(i).iter().map(|a| a * a).sum::<f64>().sqrt()).fold(0.0, f64::max);
        assert!((max - 0.25).abs() < 1e-15);
    }

    #[test]
    fn mobius_relu_examples() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::matrix(1, 2, vec![-0.3, 0.4]).unwrap());
        let out = mobius_nonlin(x, Nonlinearity::Relu, None, tape.scalar(-1.0)).unwrap().value();
        let p = Point::from_slice(&[-0.3, 0.4], -1.0).unwrap();
        let v = m::log0(&p).unwrap();
        let relu = DVector::from_iterator(2, v.iter().map(|a| a.max(0.0)));
        let expect = m::exp0(&relu, Curvature::new(-1.0).unwrap()).unwrap();
        assert_eq!(out.get(0, 0), 0.0);
        assert!((out.get(0, 1) - expect.coords()[1]).abs() < 1e-14);
        let out = mobius_nonlin(x, Nonlinearity::Relu, None, tape.scalar(0.0)).unwrap().value();
        assert_eq!(out.data(), &[0.0, 0.4]);
        let out = mobius_nonlin(x, Nonlinearity::Identity, None, tape.scalar(-1.0)).unwrap().value();
        assert!((out.get(0, 0) + 0.3).abs() < 1e-14 && (out.get(0, 1) - 0.4).abs() < 1e-14);
    }

    #[test]
    fn layer_identity_and_shape() {
        let tape = Tape::new();
        let h = Tensor::matrix(2, 2, vec![0.1, -0.2, 0.3, 0.05]).unwrap();
        let hv = tape.constant(h.clone());
        let eye = tape.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let a = Arc::new(Csr::identity(2));
        for k in [-1.0, 0.0, 0.8] {
            let out = kgcn_layer(hv, eye, &a, Nonlinearity::Identity, None, tape.scalar(k)).unwrap().value();
            assert!(out.data().iter().zip(h.data()).all(|(a, b)| (a - b).abs() < 1e-14));
        }
        let h = tape.constant(Tensor::full(&[5, 4], 0.05));
        let w = tape.constant(Tensor::full(&[4, 3], 0.1));
        let out = kgcn_layer(h, w, &Arc::new(Csr::identity(5)), Nonlinearity::Relu, None, tape.scalar(-1.0)).unwrap();
        assert_eq!(out.shape(), vec![5, 3]);
    }

    #[test]
    fn layer_matches_plain_aggregation() {
        let tape = Tape::new();
        let h = DMatrix::from_row_slice(3, 2, &[0.1, -0.2, 0.3, 0.05, -0.25, 0.2]);
        let w = DMatrix::from_row_slice(2, 2, &[0.5, -1.0, 0.7, 0.2]);
        let a = DMatrix::from_row_slice(3, 3, &[0.5, 0.5, 0.0, 0.3, 0.4, 0.3, 0.0, 0.5, 0.5]);
        let kappa = Curvature::new(-0.7).unwrap();
        let pm = PointMatrix::new(h.clone(), kappa).unwrap();
        let expect = agg::left_matmul(&a, &agg::right_matmul(&pm, &w).unwrap()).unwrap();
        let out = kgcn_layer(
            tape.constant(Tensor::from_dmatrix(&h)),
            tape.constant(Tensor::from_dmatrix(&w)),
            &Arc::new(Csr::from_dense(&Tensor::from_dmatrix(&a))),
            Nonlinearity::Identity,
            None,
            tape.scalar(-0.7),
        )
        .unwrap();
        assert!((out.value().to_dmatrix() - expect.coords()).amax() < 1e-13);
    }

    #[test]
    fn orthogonal_normal_gives_zero_logit() {
        let tape = Tape::new();
        let h = tape.constant(Tensor::matrix(1, 2, vec![0.0, 0.3]).unwrap());
        let a = tape.constant(Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap());
        let p = tape.constant(Tensor::zeros(&[1, 2]));
        for k in [-1.0, 0.0, 1.0] {
            let l = kappa_logits(h, a, p, tape.scalar(k)).unwrap().value();
            assert_eq!(l.data(), &[0.0]);
        }
    }

    #[test]
    fn logits_continuous_through_zero() {
        let tape = Tape::new();
        let h = tape.constant(Tensor::matrix(2, 3, vec![0.2, -0.1, 0.3, -0.3, 0.25, 0.1]).unwrap());
        let a = tape.constant(Tensor::matrix(2, 3, vec![1.0, 0.5, -0.2, -0.3, 0.8, 0.4]).unwrap());
        let p = tape.constant(Tensor::matrix(2, 3, vec![0.05, 0.1, -0.1, 0.0, -0.2, 0.1]).unwrap());
        let up = kappa_logits(h, a, p, tape.scalar(1e-7)).unwrap().value();
        let down = kappa_logits(h, a, p, tape.scalar(-1e-7)).unwrap().value();
        for (u, d) in up.data().iter().zip(down.data()) {
            assert!((u - d).abs() <= 1e-6 * u.abs().max(d.abs()), "{u} vs {d}");
        }
        // κ = 0 reduces to 4⟨x − p, a⟩
        let zero = kappa_logits(h, a, p, tape.scalar(0.0)).unwrap().value();
        let (hv, av, pv) = (h.value(), a.value(), p.value());
        for i in 0..2 {
            for k in 0..2 {
                let e: f64 = (0..3).map(|j| 4.0 * (hv.get(i, j) - pv.get(k, j)) * av.get(k, j)).sum();
                assert!((zero.get(i, k) - e).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn hyperbolic_logit_is_scaled_hyperplane_distance() {
        let kappa = -1.0;
        let x = [0.3, -0.4];
        let a = [0.6, 0.8];
        let p = [0.1, 0.2];
        let tape = Tape::new();
        let l = kappa_logits(
            tape.constant(Tensor::matrix(1, 2, x.to_vec()).unwrap()),
            tape.constant(Tensor::matrix(1, 2, a.to_vec()).unwrap()),
            tape.constant(Tensor::matrix(1, 2, p.to_vec()).unwrap()),
            tape.scalar(kappa),
        )
        .unwrap()
        .item()
        .unwrap();
        let pp = Point::from_slice(&p, kappa).unwrap();
        let lam = m::conformal_factor(&pp);
        let xp = Point::from_slice(&x, kappa).unwrap();
        // hyperplane points are p ⊕ t·a⊥ for real t
        let perp = [-a[1], a[0]];
        let mut best = f64::INFINITY;
        let steps = 400_000;
        for s in 0..=steps {
            let t = -8.0 + 16.0 * s as f64 / steps as f64;
            let v = Point::from_slice(&[t.tanh() * perp[0], t.tanh() * perp[1]], kappa).unwrap();
            let q = m::kappa_add(&pp, &v).unwrap();
            best = best.min(m::distance(&xp, &q).unwrap());
        }
        let ratio = l.abs() / (lam * 1.0);
        assert!((ratio - best).abs() < 1e-4, "{ratio} vs {best}");
    }
}
