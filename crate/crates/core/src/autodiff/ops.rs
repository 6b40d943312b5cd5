use std::f64::consts::FRAC_PI_2;
use std::sync::Arc;

use super::tensor::{matmul_nt, matmul_tn};
use super::{broadcast_shape, matmul, zip_with, AutodiffError, Csr, Partial, Result, Tape, Tensor, Var};
use crate::manifold::trig::{self, TAYLOR_EPS};
use crate::manifold::GeometryError;

/// Largest `|√κ·u|` accepted by the saturating `tan_k` for κ > 0.
pub const TAN_SATURATION: f64 = FRAC_PI_2 - 1e-3;

fn expand(t: &Tensor, shape: &[usize]) -> Tensor {
    if t.shape() == shape {
        return t.clone();
    }
    zip_with(t, &Tensor::zeros(shape), |a, _| a).expect("broadcast-compatible")
}

fn domain(msg: String) -> AutodiffError {
    AutodiffError::Geometry(GeometryError::Domain(msg))
}

impl<'t> Var<'t> {
    fn same_tape(&self, other: &Var<'t>) {
        assert!(std::ptr::eq(self.tape, other.tape), "operands belong to different tapes");
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        let value = zip_with(&self.value(), &other.value(), |a, b| a + b)?;
        Ok(self.tape.pointwise("add", value, vec![(self, Partial::One), (other, Partial::One)]))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        let value = zip_with(&self.value(), &other.value(), |a, b| a - b)?;
        Ok(self.tape.pointwise("sub", value, vec![(self, Partial::One), (other, Partial::Const(-1.0))]))
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        let (a, b) = (self.value(), other.value());
        let value = zip_with(&a, &b, |x, y| x * y)?;
        let shape = value.shape().to_vec();
        let mut parts = Vec::new();
        if self.requires_grad() {
            parts.push((self, Partial::Tensor(expand(&b, &shape))));
        }
        if other.requires_grad() {
            parts.push((other, Partial::Tensor(expand(&a, &shape))));
        }
        Ok(self.tape.pointwise("mul", value, parts))
    }

    pub fn div(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        let (a, b) = (self.value(), other.value());
        if b.data().iter().any(|&v| v == 0.0) {
            return Err(AutodiffError::NonFinite("division by zero".into()));
        }
        let value = zip_with(&a, &b, |x, y| x / y)?;
        let mut parts = Vec::new();
        if self.requires_grad() {
            let shape = value.shape().to_vec();
            parts.push((self, Partial::Tensor(expand(&b.map(|y| 1.0 / y), &shape))));
        }
        if other.requires_grad() {
            parts.push((other, Partial::Tensor(zip_with(&value, &b, |q, y| -q / y)?)));
        }
        Ok(self.tape.pointwise("div", value, parts))
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        let value = self.value().map(|v| v * c);
        self.tape.pointwise("scale", value, vec![(self, Partial::Const(c))])
    }

    pub fn offset(self, c: f64) -> Var<'t> {
        let value = self.value().map(|v| v + c);
        self.tape.pointwise("offset", value, vec![(self, Partial::One)])
    }

    fn unary(self, op: &'static str, f: impl Fn(f64) -> (f64, f64)) -> Var<'t> {
        let x = self.value();
        let mut value = Vec::with_capacity(x.len());
        let mut deriv = Vec::with_capacity(x.len());
        for &v in x.data() {
            let (y, d) = f(v);
            value.push(y);
            deriv.push(d);
        }
        let shape = x.shape().to_vec();
        let parts = vec![(self, Partial::Tensor(Tensor::raw(shape.clone(), deriv)))];
        self.tape.pointwise(op, Tensor::raw(shape, value), parts)
    }

    fn check_all(self, op: &str, ok: impl Fn(f64) -> bool) -> Result<()> {
        if let Some(v) = self.value().data().iter().find(|&&v| !ok(v)) {
            return Err(domain(format!("{op}: argument {v} outside the domain")));
        }
        Ok(())
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary("tanh", |x| {
            let t = x.tanh();
            (t, 1.0 - t * t)
        })
    }

    pub fn tan(self) -> Var<'t> {
        self.unary("tan", |x| {
            let t = x.tan();
            (t, 1.0 + t * t)
        })
    }

    pub fn atan(self) -> Var<'t> {
        self.unary("atan", |x| (x.atan(), 1.0 / (1.0 + x * x)))
    }

    pub fn artanh(self) -> Result<Var<'t>> {
        self.check_all("artanh", |x| x.abs() < 1.0)?;
        Ok(self.unary("artanh", |x| (x.atanh(), 1.0 / (1.0 - x * x))))
    }

    pub fn asin(self) -> Result<Var<'t>> {
        self.check_all("asin", |x| x.abs() <= 1.0)?;
        Ok(self.unary("asin", |x| {
            let d = if x.abs() < 1.0 { 1.0 / (1.0 - x * x).sqrt() } else { 0.0 };
            (x.asin(), d)
        }))
    }

    pub fn asinh(self) -> Var<'t> {
        self.unary("asinh", |x| (x.asinh(), 1.0 / (1.0 + x * x).sqrt()))
    }

    /// Square root; the derivative at 0 is taken as 0.
    pub fn sqrt(self) -> Result<Var<'t>> {
        self.check_all("sqrt", |x| x >= 0.0)?;
        Ok(self.unary("sqrt", |x| {
            let s = x.sqrt();
            (s, if s > 0.0 { 0.5 / s } else { 0.0 })
        }))
    }

    pub fn exp(self) -> Var<'t> {
        self.unary("exp", |x| {
            let e = x.exp();
            (e, e)
        })
    }

    pub fn log(self) -> Result<Var<'t>> {
        self.check_all("log", |x| x > 0.0)?;
        Ok(self.unary("log", |x| (x.ln(), 1.0 / x)))
    }

    pub fn relu(self) -> Var<'t> {
        self.unary("relu", |x| if x > 0.0 { (x, 1.0) } else { (0.0, 0.0) })
    }

    pub fn abs(self) -> Var<'t> {
        self.unary("abs", |x| (x.abs(), if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 }))
    }

    pub fn square(self) -> Var<'t> {
        self.unary("square", |x| (x * x, 2.0 * x))
    }

    /// `ln(1 + eˣ)`, evaluated without overflow.
    pub fn softplus(self) -> Var<'t> {
        self.unary("softplus", |x| {
            let sig = 1.0 / (1.0 + (-x).exp());
            let v = if x > 30.0 { x } else { x.exp().ln_1p() };
            (v, sig)
        })
    }

    /// Identity inside `[lo, hi]`, constant with zero gradient outside.
    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        self.unary("clamp", |x| if x < lo { (lo, 0.0) } else if x > hi { (hi, 0.0) } else { (x, 1.0) })
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        let (a, b) = (self.value(), other.value());
        if a.shape().len() != 2 || b.shape().len() != 2 || a.cols() != b.rows() {
            return Err(AutodiffError::Shape(format!("matmul {:?} x {:?}", a.shape(), b.shape())));
        }
        let value = matmul(&a, &b);
        Ok(self.tape.custom(
            "matmul",
            value,
            &[self, other],
            Box::new(move |g, mask| {
                let ga = mask[0].then(|| matmul_nt(g, &b));
                let gb = mask[1].then(|| matmul_tn(&a, g));
                vec![ga, gb]
            }),
        ))
    }

    /// `A·self` for a constant sparse `A`.
    pub fn spmm(self, a: &Arc<Csr>) -> Result<Var<'t>> {
        let value = a.mul_dense(&self.value())?;
        let a = a.clone();
        Ok(self.tape.custom("spmm", value, &[self], Box::new(move |g, _| vec![Some(a.tmul_dense(g))])))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(self) -> Var<'t> {
        let x = self.value();
        let value = Tensor::scalar(x.data().iter().sum());
        let shape = x.shape().to_vec();
        self.tape.custom(
            "sum",
            value,
            &[self],
            Box::new(move |g, _| vec![Some(Tensor::full(&shape, g.data()[0]))]),
        )
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.value().len().max(1) as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sum over the last axis: `[n, d] → [n, 1]`, `[d] → []`.
    pub fn sum_rows(self) -> Var<'t> {
        let x = self.value();
        let (r, c) = x.dims2();
        let out_shape = if x.shape().len() == 2 { vec![r, 1] } else { vec![] };
        let value = Tensor::raw(out_shape, (0..r).map(|i| x.row(i).iter().sum()).collect());
        let shape = x.shape().to_vec();
        self.tape.custom(
            "sum_rows",
            value,
            &[self],
            Box::new(move |g, _| {
                let mut out = Vec::with_capacity(r * c);
                for i in 0..r {
                    out.extend(std::iter::repeat(g.data()[i]).take(c));
                }
                vec![Some(Tensor::raw(shape.clone(), out))]
            }),
        )
    }

    /// Euclidean norm over the last axis with a zero subgradient at 0.
    pub fn norm2(self) -> Var<'t> {
        let x = self.value();
        let (r, c) = x.dims2();
        let out_shape = if x.shape().len() == 2 { vec![r, 1] } else { vec![] };
        let norms: Vec<f64> = (0..r).map(|i| x.row(i).iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
        let value = Tensor::raw(out_shape, norms.clone());
        self.tape.custom(
            "norm2",
            value,
            &[self],
            Box::new(move |g, _| {
                let mut out = vec![0.0; r * c];
                for i in 0..r {
                    if norms[i] > 0.0 {
                        let s = g.data()[i] / norms[i];
                        for j in 0..c {
                            out[i * c + j] = s * x.data()[i * c + j];
                        }
                    }
                }
                vec![Some(Tensor::raw(x.shape().to_vec(), out))]
            }),
        )
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(self, start: usize, len: usize) -> Result<Var<'t>> {
        let x = self.value();
        let (r, c) = x.dims2();
        if x.shape().len() != 2 || start + len > c {
            return Err(AutodiffError::Shape(format!("slice {start}..{} of {:?}", start + len, x.shape())));
        }
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&x.row(i)[start..start + len]);
        }
        Ok(self.tape.custom(
            "slice",
            Tensor::raw(vec![r, len], data),
            &[self],
            Box::new(move |g, _| {
                let mut out = vec![0.0; r * c];
                for i in 0..r {
                    out[i * c + start..i * c + start + len].copy_from_slice(g.row(i));
                }
                vec![Some(Tensor::raw(vec![r, c], out))]
            }),
        ))
    }

    /// Repeats the value to `shape` following the broadcasting rules.
    pub fn broadcast_to(self, shape: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        if broadcast_shape(x.shape(), shape)? != shape {
            return Err(AutodiffError::Shape(format!("cannot broadcast {:?} to {shape:?}", x.shape())));
        }
        let value = expand(&x, shape);
        Ok(self.tape.pointwise("broadcast", value, vec![(self, Partial::One)]))
    }

    /// Row-wise softmax.
    pub fn softmax(self) -> Var<'t> {
        let x = self.value();
        let (r, c) = x.dims2();
        let mut p = Vec::with_capacity(r * c);
        for i in 0..r {
            p.extend(softmax_row(x.row(i)));
        }
        let p = Tensor::raw(x.shape().to_vec(), p);
        let saved = p.clone();
        self.tape.custom(
            "softmax",
            p,
            &[self],
            Box::new(move |g, _| {
                let mut out = vec![0.0; r * c];
                for i in 0..r {
                    let (pr, gr) = (saved.row(i), g.row(i));
                    let dot: f64 = pr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        out[i * c + j] = pr[j] * (gr[j] - dot);
                    }
                }
                vec![Some(Tensor::raw(saved.shape().to_vec(), out))]
            }),
        )
    }

    /// Mean cross-entropy of row-wise softmax over the listed rows.
    pub fn softmax_xent(self, rows: &[usize], targets: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        let (r, c) = x.dims2();
        if rows.len() != targets.len() || rows.is_empty() {
            return Err(AutodiffError::Shape("softmax_xent needs one target per row".into()));
        }
        if rows.iter().any(|&i| i >= r) || targets.iter().any(|&t| t >= c) {
            return Err(AutodiffError::Shape("softmax_xent index out of range".into()));
        }
        let m = rows.len() as f64;
        let mut loss = 0.0;
        let mut probs = Vec::with_capacity(rows.len());
        for (&i, &t) in rows.iter().zip(targets) {
            let p = softmax_row(x.row(i));
            loss -= p[t].max(f64::MIN_POSITIVE).ln();
            probs.push(p);
        }
        let rows = rows.to_vec();
        let targets = targets.to_vec();
        let shape = x.shape().to_vec();
        Ok(self.tape.custom(
            "softmax_xent",
            Tensor::scalar(loss / m),
            &[self],
            Box::new(move |g, _| {
                let s = g.data()[0] / m;
                let mut out = vec![0.0; r * c];
                for ((&i, &t), p) in rows.iter().zip(&targets).zip(&probs) {
                    for j in 0..c {
                        out[i * c + j] += s * (p[j] - if j == t { 1.0 } else { 0.0 });
                    }
                }
                vec![Some(Tensor::raw(shape.clone(), out))]
            }),
        ))
    }

    fn kappa_unary(
        self,
        op: &'static str,
        kappa: Var<'t>,
        f: impl Fn(f64, f64) -> std::result::Result<(f64, f64, f64), GeometryError>,
    ) -> Result<Var<'t>> {
        self.same_tape(&kappa);
        let k = kappa.item()?;
        let x = self.value();
        let n = x.len();
        let mut value = Vec::with_capacity(n);
        let mut du = Vec::with_capacity(n);
        let mut dk = Vec::with_capacity(n);
        for &u in x.data() {
            let (v, a, b) = f(u, k)?;
            value.push(v);
            du.push(a);
            dk.push(b);
        }
        let shape = x.shape().to_vec();
        let kshape = kappa.shape();
        Ok(self.tape.custom(
            op,
            Tensor::raw(shape.clone(), value),
            &[self, kappa],
            Box::new(move |g, mask| {
                let gu = mask[0]
                    .then(|| Tensor::raw(shape.clone(), g.data().iter().zip(&du).map(|(a, b)| a * b).collect()));
                let gk = mask[1].then(|| {
                    let s: f64 = g.data().iter().zip(&dk).map(|(a, b)| a * b).sum();
                    Tensor::full(&kshape, s)
                });
                vec![gu, gk]
            }),
        ))
    }

    /// Elementwise `tan_k(u, κ)`; fails outside the κ > 0 range.
    pub fn tan_k(self, kappa: Var<'t>) -> Result<Var<'t>> {
        self.kappa_unary("tan_k", kappa, |u, k| {
            let f = trig::tan_k(u, k)?;
            let (a, b) = trig::tan_k_partials(u, k, f);
            Ok((f, a, b))
        })
    }

    /// `tan_k` with `|√κ·u|` saturated at [`TAN_SATURATION`] for κ > 0.
    pub fn tan_k_saturating(self, kappa: Var<'t>) -> Result<Var<'t>> {
        self.kappa_unary("tan_k_sat", kappa, |u, k| {
            if k > 0.0 && k * u * u >= TAYLOR_EPS && k.sqrt() * u.abs() > TAN_SATURATION {
                let f = TAN_SATURATION.tan().copysign(u) / k.sqrt();
                return Ok((f, 0.0, -f / (2.0 * k)));
            }
            let f = trig::tan_k(u, k)?;
            let (a, b) = trig::tan_k_partials(u, k, f);
            Ok((f, a, b))
        })
    }

    /// Elementwise `atan_k(u, κ)`; for κ < 0 the argument is clamped to the
    /// projected ball radius with zero gradient beyond it.
    pub fn atan_k(self, kappa: Var<'t>) -> Result<Var<'t>> {
        self.kappa_unary("atan_k", kappa, |u, k| {
            if k < 0.0 && k * u * u <= -TAYLOR_EPS {
                let max = (1.0 - crate::manifold::BOUNDARY_EPS) / (-k).sqrt();
                if u.abs() > max {
                    let g = trig::atan_k(max, k)?.copysign(u);
                    // g = artanh(c)/√−κ with c fixed
                    return Ok((g, 0.0, -g / (2.0 * k)));
                }
            }
            let g = trig::atan_k(u, k)?;
            let (a, b) = trig::atan_k_partials(u, k, g);
            Ok((g, a, b))
        })
    }

    /// Elementwise `asin_k(w, κ)` with the κ > 0 argument clamp.
    pub fn asin_k(self, kappa: Var<'t>) -> Result<Var<'t>> {
        self.kappa_unary("asin_k", kappa, |w, k| {
            let f = trig::asin_k(w, k);
            let (a, b) = trig::asin_k_partials(w, k, f);
            Ok((f, a, b))
        })
    }
}

impl Tape {
    /// Concatenates matrices with equal row counts along columns.
    pub fn concat_cols<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>> {
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let r = values.first().map(|v| v.rows()).ok_or_else(|| AutodiffError::Shape("empty concat".into()))?;
        if values.iter().any(|v| v.rows() != r || v.shape().len() != 2) {
            return Err(AutodiffError::Shape("concat needs matrices with equal row counts".into()));
        }
        let widths: Vec<usize> = values.iter().map(|v| v.cols()).collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for v in &values {
                data.extend_from_slice(v.row(i));
            }
        }
        Ok(self.custom(
            "concat",
            Tensor::raw(vec![r, total], data),
            parts,
            Box::new(move |g, _| {
                let mut offset = 0;
                widths
                    .iter()
                    .map(|&w| {
                        let mut out = Vec::with_capacity(r * w);
                        for i in 0..r {
                            out.extend_from_slice(&g.row(i)[offset..offset + w]);
                        }
                        offset += w;
                        Some(Tensor::raw(vec![r, w], out))
                    })
                    .collect()
            }),
        ))
    }

    /// Records a scalar-valued op with a hand-written gradient. `grads` holds
    /// `∂value/∂input` for each input, shaped like that input.
    pub fn fused_scalar<'t>(&'t self, op: &'static str, value: f64, inputs: &[Var<'t>], grads: Vec<Tensor>) -> Var<'t> {
        assert_eq!(inputs.len(), grads.len());
        self.custom(
            op,
            Tensor::scalar(value),
            inputs,
            Box::new(move |g, mask| {
                let s = g.data()[0];
                grads.iter().zip(mask).map(|(t, &m)| m.then(|| t.map(|v| v * s))).collect()
            }),
        )
    }
}

fn softmax_row(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}
