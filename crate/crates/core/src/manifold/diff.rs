//! Tape-recorded kernel operations.
//!
//! Points are the rows of an `[n, d]` tensor and κ is a scalar [`Var`], so every
//! function here is differentiable with respect to both. A second operand of
//! shape `[1, d]` or `[d]` is broadcast against all rows. Results for κ < 0 are
//! radially projected into the ball exactly like the `f64` kernel.

use crate::autodiff::{Result, Tensor, Var};

use super::{BOUNDARY_EPS, MIN_NORM};

fn norm_clamped(x: Var<'_>) -> Var<'_> {
    x.norm2().clamp(MIN_NORM, f64::INFINITY)
}

/// Row-wise squared norms `[n, 1]`.
pub fn sq_norm(x: Var<'_>) -> Var<'_> {
    x.square().sum_rows()
}

/// Row-wise inner products `[n, 1]`.
pub fn dot<'t>(x: Var<'t>, y: Var<'t>) -> Result<Var<'t>> {
    Ok(x.mul(y)?.sum_rows())
}

/// Radial projection into the ball of radius `(1 − BOUNDARY_EPS)/√−κ`.
pub fn project<'t>(x: Var<'t>, kappa: Var<'t>) -> Result<Var<'t>> {
    let k = kappa.item()?;
    if k >= 0.0 {
        return Ok(x);
    }
    let max = (1.0 - BOUNDARY_EPS) / (-k).sqrt();
    let v = x.value();
    let (r, c) = v.dims2();
    let norms: Vec<f64> = (0..r).map(|i| v.row(i).iter().map(|a| a * a).sum::<f64>().sqrt()).collect();
    if norms.iter().all(|&n| n <= max) {
        return Ok(x);
    }
    let mut out = v.data().to_vec();
    for i in 0..r {
        if norms[i] > max {
            let s = max / norms[i];
            out[i * c..(i + 1) * c].iter_mut().for_each(|a| *a *= s);
        }
    }
    let value = Tensor::new(v.shape().to_vec(), out)?;
    // dm/dκ for m = (1 − ε)(−κ)^{−1/2}
    let dmax = 0.5 * max / -k;
    let kshape = kappa.shape();
    Ok(x.tape().custom(
        "project",
        value,
        &[x, kappa],
        Box::new(move |g, _| {
            let mut gx = g.data().to_vec();
            let mut gk = 0.0;
            for i in 0..r {
                if norms[i] <= max {
                    continue;
                }
                let xr = v.row(i);
                let gr = g.row(i);
                let n = norms[i];
                let xhat_g: f64 = xr.iter().zip(gr).map(|(a, b)| a * b).sum::<f64>() / n;
                for j in 0..c {
                    gx[i * c + j] = max / n * (gr[j] - xhat_g * xr[j] / n);
                }
                gk += xhat_g * dmax;
            }
            vec![Some(Tensor::raw(v.shape().to_vec(), gx)), Some(Tensor::full(&kshape, gk))]
        }),
    ))
}

/// `λ_x^κ = 2 / (1 + κ‖x‖²)` per row.
pub fn conformal_factor<'t>(x: Var<'t>, kappa: Var<'t>) -> Result<Var<'t>> {
    let den = sq_norm(x).mul(kappa)?.offset(1.0);
    x.tape().scalar(2.0).div(den)
}

/// Row-wise κ-addition.
pub fn kappa_add<'t>(x: Var<'t>, y: Var<'t>, kappa: Var<'t>) -> Result<Var<'t>> {
    let xy = dot(x, y)?;
    let x2 = sq_norm(x);
    let y2 = sq_norm(y);
    let kxy2 = xy.mul(kappa)?.scale(2.0);
    let a = x2.mul(y2)?.mul(kappa.square())?.sub(kxy2)?.offset(1.0);
    let cx = kxy2.add(y2.mul(kappa)?)?.neg().offset(1.0);
    let cy = x2.mul(kappa)?.offset(1.0);
    let num = x.mul(cx)?.add(y.mul(cy)?)?;
    project(num.div(a)?, kappa)
}

/// `r ⊗_κ x` with `r` a scalar or one value per row.
pub fn kappa_scale<'t>(r: Var<'t>, x: Var<'t>, kappa: Var<'t>) -> Result<Var<'t>> {
    let n = norm_clamped(x);
    let t = n.atan_k(kappa)?.mul(r)?.tan_k_saturating(kappa)?;
    project(x.mul(t.div(n)?)?, kappa)
}

/// `exp_0(v) = tan_k(‖v‖)·v/‖v‖`.
pub fn exp0<'t>(v: Var<'t>, kappa: Var<'t>) -> Result<Var<'t>> {
    let n = norm_clamped(v);
    let t = n.tan_k_saturating(kappa)?;
    project(v.mul(t.div(n)?)?, kappa)
}

/// `log_0(x) = atan_k(‖x‖)·x/‖x‖`.
pub fn log0<'t>(x: Var<'t>, kappa: Var<'t>) -> Result<Var<'t>> {
    let n = norm_clamped(x);
    let t = n.atan_k(kappa)?;
    x.mul(t.div(n)?)
}

pub fn exp_map<'t>(x: Var<'t>, v: Var<'t>, kappa: Var<'t>) -> Result<Var<'t>> {
    let n = norm_clamped(v);
    let lam = conformal_factor(x, kappa)?;
    let t = lam.mul(n)?.scale(0.5).tan_k_saturating(kappa)?;
    let step = v.mul(t.div(n)?)?;
    kappa_add(x, step, kappa)
}

pub fn log_map<'t>(x: Var<'t>, y: Var<'t>, kappa: Var<'t>) -> Result<Var<'t>> {
    let w = kappa_add(x.neg(), y, kappa)?;
    let n = norm_clamped(w);
    let lam = conformal_factor(x, kappa)?;
    let t = n.atan_k(kappa)?.div(lam)?.scale(2.0);
    w.mul(t.div(n)?)
}

/// Row-wise `‖−x ⊕_κ y‖` via `‖x − y‖ / √(1 + 2κ⟨x,y⟩ + κ²‖x‖²‖y‖²)`.
pub fn gyro_norm_diff<'t>(x: Var<'t>, y: Var<'t>, kappa: Var<'t>) -> Result<Var<'t>> {
    let r = x.sub(y)?.norm2();
    let den = dot(x, y)?
        .mul(kappa)?
        .scale(2.0)
        .add(sq_norm(x).mul(sq_norm(y))?.mul(kappa.square())?)?
        .offset(1.0)
        .clamp(super::ANTIPODAL_EPS, f64::INFINITY);
    r.div(den.sqrt()?)
}

/// Row-wise geodesic distance `[n, 1]`.
pub fn distance<'t>(x: Var<'t>, y: Var<'t>, kappa: Var<'t>) -> Result<Var<'t>> {
    Ok(gyro_norm_diff(x, y, kappa)?.atan_k(kappa)?.scale(2.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_diff, grad_error, Tape};
    use crate::manifold::{self as m, Point, TangentVector};
    use nalgebra::DVector;

    const X: [f64; 6] = [0.2, -0.3, 0.1, -0.1, 0.25, 0.35];
    const Y: [f64; 6] = [-0.4, 0.1, 0.3, 0.05, -0.2, 0.15];

    fn rows(data: &[f64]) -> Tensor {
        Tensor::matrix(2, 3, data.to_vec()).unwrap()
    }

    fn point(t: &Tensor, i: usize, k: f64) -> Point {
        Point::from_slice(t.row(i), k).unwrap()
    }

    fn close(a: &DVector<f64>, b: &[f64], tol: f64) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn matches_point_kernel() {
        let (xt, yt) = (rows(&X), rows(&Y));
        for &k in &[-1.2, -1e-12, 0.0, 0.8] {
            let tape = Tape::new();
            let x = tape.constant(xt.clone());
            let y = tape.constant(yt.clone());
            let kv = tape.scalar(k);
            let add = kappa_add(x, y, kv).unwrap().value();
            let dist = distance(x, y, kv).unwrap().value();
            let e = exp_map(x, y, kv).unwrap().value();
            let l = log_map(x, y, kv).unwrap().value();
            let s = kappa_scale(tape.scalar(-1.7), x, kv).unwrap().value();
            let lam = conformal_factor(x, kv).unwrap().value();
            let e0 = exp0(y, kv).unwrap().value();
            let l0 = log0(x, kv).unwrap().value();
            for i in 0..2 {
                let (p, q) = (point(&xt, i, k), point(&yt, i, k));
                close(m::kappa_add(&p, &q).unwrap().coords(), add.row(i), 1e-14);
                assert!((m::distance(&p, &q).unwrap() - dist.row(i)[0]).abs() < 1e-14);
                let v = TangentVector::new(q.coords().clone(), p.clone()).unwrap();
                close(m::exp_map(&p, &v).unwrap().coords(), e.row(i), 1e-14);
                close(m::log_map(&p, &q).unwrap().coords(), l.row(i), 1e-14);
                close(m::kappa_scale(-1.7, &p).unwrap().coords(), s.row(i), 1e-14);
                assert!((m::conformal_factor(&p) - lam.row(i)[0]).abs() < 1e-15);
                let o = Point::origin(3, p.kappa());
                let v0 = TangentVector::new(q.coords().clone(), o.clone()).unwrap();
                close(m::exp_map(&o, &v0).unwrap().coords(), e0.row(i), 1e-14);
                close(m::log_map(&o, &p).unwrap().coords(), l0.row(i), 1e-14);
            }
        }
    }

    type Op = for<'a> fn(Var<'a>, Var<'a>, Var<'a>) -> Result<Var<'a>>;

    fn grad_check(op: Op, k: f64) {
        // loss = Σ op(x, y, κ) ⊙ c for a fixed weighting c
        let weights: Vec<f64> = (0..6).map(|i| 0.3 + 0.1 * i as f64).collect();
        let eval = |xt: &Tensor, yt: &Tensor, kt: &Tensor| -> f64 {
            let tape = Tape::new();
            let out = op(tape.constant(xt.clone()), tape.constant(yt.clone()), tape.constant(kt.clone())).unwrap();
            out.value().data().iter().zip(&weights).map(|(a, b)| a * b).sum()
        };
        let (xt, yt, kt) = (rows(&X), rows(&Y), Tensor::scalar(k));
        let tape = Tape::new();
        let (x, y, kv) = (tape.leaf(xt.clone()), tape.leaf(yt.clone()), tape.leaf(kt.clone()));
        let out = op(x, y, kv).unwrap();
        let w = tape.constant(Tensor::new(out.shape(), weights[..out.value().len()].to_vec()).unwrap());
        let g = tape.backward(out.mul(w).unwrap().sum()).unwrap();
        let h = 1e-6;
        let gx = finite_diff(|t| eval(t, &yt, &kt), &xt, h);
        let gy = finite_diff(|t| eval(&xt, t, &kt), &yt, h);
        let gk = finite_diff(|t| eval(&xt, &yt, t), &kt, h);
        for (a, n, name) in [(g.wrt(x), gx, "x"), (g.wrt(y), gy, "y"), (g.wrt(kv), gk, "kappa")] {
            let err = grad_error(&a, &n, 1e-3);
            assert!(err < 1e-5, "{name} at kappa {k}: {err:e}\n{a:?}\n{n:?}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let ops: [Op; 6] = [
            kappa_add,
            distance,
            exp_map,
            log_map,
            |x, y, k| kappa_scale(y.sum_rows(), x, k),
            |x, y, k| exp0(log0(x, k)?.add(y)?, k),
        ];
        for &k in &[-1.1, -1e-3, 1e-9, 1e-3, 0.6] {
            for op in ops {
                grad_check(op, k);
            }
        }
    }

    #[test]
    fn projection_gradient() {
        let xt = Tensor::matrix(2, 2, vec![0.9, 0.5, 0.1, 0.2]).unwrap();
        let op: Op = |x, _, k| project(x, k);
        let eval = |xt: &Tensor, k: f64| -> Tensor {
            let tape = Tape::new();
            project(tape.constant(xt.clone()), tape.scalar(k)).unwrap().value().as_ref().clone()
        };
        let p = eval(&xt, -1.0);
        assert!((p.row(0).iter().map(|v| v * v).sum::<f64>().sqrt() - (1.0 - 1e-5)).abs() < 1e-12);
        assert_eq!(p.row(1), xt.row(1));
        let tape = Tape::new();
        let (x, k) = (tape.leaf(xt.clone()), tape.leaf(Tensor::scalar(-1.0)));
        let out = op(x, x, k).unwrap();
        let g = tape.backward(out.square().sum().add(out.sum()).unwrap()).unwrap();
        let f = |xt: &Tensor, k: f64| eval(xt, k).data().iter().map(|v| v * v + v).sum::<f64>();
        let gx = finite_diff(|t| f(t, -1.0), &xt, 1e-7);
        let gk = finite_diff(|t| f(&xt, t.data()[0]), &Tensor::vector(vec![-1.0]), 1e-7);
        assert!(grad_error(&g.wrt(x), &gx, 1e-3) < 1e-5);
        assert!((g.wrt(k).item().unwrap() - gk.data()[0]).abs() < 1e-6);
    }

    #[test]
    fn kappa_derivative_is_continuous_at_zero() {
        let d = |k: f64| {
            let tape = Tape::new();
            let kv = tape.leaf(Tensor::scalar(k));
            let out = distance(tape.constant(rows(&X)), tape.constant(rows(&Y)), kv).unwrap().sum();
            tape.backward(out).unwrap().wrt(kv).item().unwrap()
        };
        let (a, b) = (d(1e-8), d(-1e-8));
        assert!((a - b).abs() <= 1e-4 * a.abs().max(b.abs()));
    }
}
