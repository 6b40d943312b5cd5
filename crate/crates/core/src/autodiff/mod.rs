//! Reverse-mode differentiation over small dense tensors.
//!
//! A [`Tape`] records every operation eagerly: the forward value is computed
//! when the node is pushed, together with whatever the backward pass needs.
//! [`Var`] is a cheap copyable handle into a tape. Calling [`Tape::backward`]
//! on a scalar node walks the tape in reverse and returns a [`Gradients`] map
//! covering every leaf.
//!
//! ```
//! use kgcn_core::autodiff::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.leaf(Tensor::scalar(3.0));
//! let y = x.mul(x).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.wrt(x).item().unwrap(), 6.0);
//! ```

mod ops;
mod sparse;
mod tensor;

use std::cell::RefCell;
use std::rc::Rc;

use thiserror::Error;

use crate::manifold::GeometryError;

pub use ops::TAN_SATURATION;
pub use sparse::Csr;
pub use tensor::Tensor;
pub(crate) use tensor::{broadcast_shape, matmul, reduce_to, zip_with};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("expected a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type Result<T> = std::result::Result<T, AutodiffError>;

/// Local derivative of an elementwise op with respect to one input.
pub(crate) enum Partial {
    One,
    Const(f64),
    Tensor(Tensor),
}

/// Maps the upstream gradient to one gradient per input. The mask says which
/// inputs actually need one.
pub(crate) type BackwardFn = Box<dyn Fn(&Tensor, &[bool]) -> Vec<Option<Tensor>>>;

enum Backward {
    Leaf,
    Pointwise(Vec<(usize, Partial)>),
    Custom { inputs: Vec<usize>, f: BackwardFn },
}

struct Node {
    op: &'static str,
    value: Rc<Tensor>,
    requires_grad: bool,
    backward: Backward,
}

/// Append-only record of tensor operations.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let shape = self.shape();
        write!(f, "Var({}, {}, {:?})", self.id, self.tape.op_name(self.id), shape)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A trainable input.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push("leaf", value, true, Backward::Leaf)
    }

    /// An input that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push("constant", value, false, Backward::Leaf)
    }

    pub fn scalar(&self, v: f64) -> Var<'_> {
        self.constant(Tensor::scalar(v))
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Operation names in recording order.
    pub fn ops(&self) -> Vec<&'static str> {
        self.nodes.borrow().iter().map(|n| n.op).collect()
    }

    fn op_name(&self, id: usize) -> &'static str {
        self.nodes.borrow()[id].op
    }

    fn push(&self, op: &'static str, value: Tensor, requires_grad: bool, backward: Backward) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op, value: Rc::new(value), requires_grad, backward });
        Var { tape: self, id: nodes.len() - 1 }
    }

    fn needs_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Records an elementwise op with precomputed local partials.
    pub(crate) fn pointwise(&self, op: &'static str, value: Tensor, parts: Vec<(Var<'_>, Partial)>) -> Var<'_> {
        let parts: Vec<(usize, Partial)> =
            parts.into_iter().filter(|(v, _)| self.needs_grad(v.id)).map(|(v, p)| (v.id, p)).collect();
        let rg = !parts.is_empty();
        self.push(op, value, rg, Backward::Pointwise(parts))
    }

    /// Records an op whose backward pass is an arbitrary closure.
    pub(crate) fn custom(&self, op: &'static str, value: Tensor, inputs: &[Var<'_>], f: BackwardFn) -> Var<'_> {
        let ids: Vec<usize> = inputs.iter().map(|v| v.id).collect();
        let rg = ids.iter().any(|&i| self.needs_grad(i));
        let backward = if rg { Backward::Custom { inputs: ids, f } } else { Backward::Leaf };
        self.push(op, value, rg, backward)
    }

    /// Reverse pass from a one-element node.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(AutodiffError::NotScalar(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.id).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::full(root.value.shape(), 1.0));
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                grads[id] = None;
                continue;
            }
            let g = match &grads[id] {
                Some(g) => g.clone(),
                None => continue,
            };
            match &node.backward {
                Backward::Leaf => {}
                Backward::Pointwise(parts) => {
                    for (inp, p) in parts {
                        let local = match p {
                            Partial::One => g.clone(),
                            Partial::Const(c) => g.map(|v| v * c),
                            Partial::Tensor(t) => zip_with(&g, t, |a, b| a * b)?,
                        };
                        let local = reduce_to(local, nodes[*inp].value.shape());
                        accumulate(&mut grads[*inp], local);
                    }
                    grads[id] = None;
                }
                Backward::Custom { inputs, f } => {
                    let mask: Vec<bool> = inputs.iter().map(|&i| nodes[i].requires_grad).collect();
                    let out = f(&g, &mask);
                    for ((&inp, gi), need) in inputs.iter().zip(out).zip(&mask) {
                        if let (Some(gi), true) = (gi, need) {
                            debug_assert_eq!(gi.len(), nodes[inp].value.len(), "{}", node.op);
                            let gi = reduce_to(gi, nodes[inp].value.shape());
                            accumulate(&mut grads[inp], gi);
                        }
                    }
                    grads[id] = None;
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        None => *slot = Some(g),
    }
}

/// Gradients of one scalar with respect to every leaf of the tape.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `v`, zero when `v` does not influence the loss.
    pub fn wrt(&self, v: Var<'_>) -> Tensor {
        match self.grads.get(v.id).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => Tensor::zeros(v.value().shape()),
        }
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn item(&self) -> Result<f64> {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.needs_grad(self.id)
    }
}

/// Central differences `(f(θ + h·eᵢ) − f(θ − h·eᵢ)) / 2h` for every coordinate.
pub fn finite_diff(mut f: impl FnMut(&Tensor) -> f64, theta: &Tensor, h: f64) -> Tensor {
    let mut out = Tensor::zeros(theta.shape());
    let mut probe = theta.clone();
    for i in 0..theta.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let fp = f(&probe);
        probe.data_mut()[i] = orig - h;
        let fm = f(&probe);
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (fp - fm) / (2.0 * h);
    }
    out
}

/// Largest relative error between two gradients, with an absolute floor for
/// entries whose magnitude is below `small`.
pub fn grad_error(analytic: &Tensor, numeric: &Tensor, small: f64) -> f64 {
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| {
            let scale = a.abs().max(n.abs());
            if scale < small {
                (a - n).abs() / small
            } else {
                (a - n).abs() / scale
            }
        })
        .fold(0.0, f64::max)
}
