//! κ-GCN parameters, configuration and forward pass.

mod layers;
mod product;

use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Csr, Tape, Tensor, Var};
use crate::graph::{AdjacencyMode, GraphError};
use crate::agg::diff::right_matmul;
use crate::manifold::diff::exp0;
use crate::manifold::MIN_NORM;

pub use layers::{
    dropout_mask, kappa_logits, kgcn_layer, mobius_nonlin, preprocess_features, Nonlinearity, MIN_NORMAL,
};
pub use product::{product_distance, product_split, split_even};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Numeric(#[from] AutodiffError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// How a component's curvature is parametrised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Constraint {
    /// κ is trained directly and may change sign.
    Free,
    /// κ = −softplus(s)
    Negative,
    /// κ = softplus(s)
    Positive,
    /// κ is a constant.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComponentSpec {
    pub kappa: f64,
    pub constraint: Constraint,
}

impl ComponentSpec {
    pub fn new(kappa: f64, constraint: Constraint) -> Self {
        Self { kappa, constraint }
    }
}

/// Common model families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Euclidean,
    Hyperbolic,
    Spherical,
    ProductHs,
    ProductHh,
    ProductSs,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::Euclidean,
        Family::Hyperbolic,
        Family::Spherical,
        Family::ProductHs,
        Family::ProductHh,
        Family::ProductSs,
    ];

    pub fn components(self) -> Vec<ComponentSpec> {
        let h = ComponentSpec::new(-1.0, Constraint::Negative);
        let s = ComponentSpec::new(1.0, Constraint::Positive);
        match self {
            Family::Euclidean => vec![ComponentSpec::new(0.0, Constraint::Fixed)],
            Family::Hyperbolic => vec![h],
            Family::Spherical => vec![s],
            Family::ProductHs => vec![h, s],
            Family::ProductHh => vec![h, h],
            Family::ProductSs => vec![s, s],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Euclidean => "euclidean",
            Family::Hyperbolic => "hyperbolic",
            Family::Spherical => "spherical",
            Family::ProductHs => "product-hs",
            Family::ProductHh => "product-hh",
            Family::ProductSs => "product-ss",
        }
    }
}

impl FromStr for Family {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| ModelError::Config(format!("unknown model family {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// One entry per product factor; layer widths are split evenly among them.
    pub components: Vec<ComponentSpec>,
    /// Output widths of the κ-GCN layers.
    pub hidden: Vec<usize>,
    pub dropout_features: f64,
    pub dropout_adjacency: f64,
    pub nonlinearity: Nonlinearity,
    pub adjacency: AdjacencyMode,
    pub lr_euclidean: f64,
    pub lr_curvature: f64,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub l2_first_layer: f64,
    /// Rescale input features into the domain before the first layer.
    pub preprocess: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::nodeclass(Family::Hyperbolic)
    }
}

impl ModelConfig {
    /// One hidden layer of 16 with dropout and ReLU.
    pub fn nodeclass(family: Family) -> Self {
        Self {
            components: family.components(),
            hidden: vec![16],
            dropout_features: 0.5,
            dropout_adjacency: 0.5,
            nonlinearity: Nonlinearity::Relu,
            adjacency: AdjacencyMode::Symmetric,
            lr_euclidean: 0.01,
            lr_curvature: 0.01,
            epochs: 2000,
            patience: 200,
            seed: 0,
            l2_first_layer: 5e-4,
            preprocess: true,
        }
    }

    /// Two linear layers of 16 and 10 without dropout, aggregating with the
    /// row-stochastic adjacency.
    pub fn distortion(family: Family) -> Self {
        Self {
            hidden: vec![16, 10],
            adjacency: AdjacencyMode::Left,
            dropout_features: 0.0,
            dropout_adjacency: 0.0,
            nonlinearity: Nonlinearity::Identity,
            lr_curvature: 1e-4,
            l2_first_layer: 0.0,
            ..Self::nodeclass(family)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.components.is_empty() {
            return bad("at least one manifold component is required".into());
        }
        for c in &self.components {
            if !c.kappa.is_finite() {
                return bad(format!("curvature {} is not finite", c.kappa));
            }
            let ok = match c.constraint {
                Constraint::Negative => c.kappa < 0.0,
                Constraint::Positive => c.kappa > 0.0,
                _ => true,
            };
            if !ok {
                return bad(format!("initial curvature {} violates the {:?} constraint", c.kappa, c.constraint));
            }
        }
        if self.hidden.is_empty() {
            return bad("at least one layer is required".into());
        }
        let k = self.components.len();
        if let Some(w) = self.hidden.iter().find(|&&w| w < k) {
            return bad(format!("layer width {w} cannot be split across {k} components"));
        }
        for (name, r) in [("dropout_features", self.dropout_features), ("dropout_adjacency", self.dropout_adjacency)] {
            if !(0.0..1.0).contains(&r) {
                return bad(format!("{name} = {r} must lie in [0, 1)"));
            }
        }
        for (name, v) in [
            ("lr_euclidean", self.lr_euclidean),
            ("lr_curvature", self.lr_curvature),
            ("l2_first_layer", self.l2_first_layer),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} = {v} must be finite and non-negative"));
            }
        }
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| ModelError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One factor of the embedding space with its trainable curvature.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldComponent {
    pub dim: usize,
    pub constraint: Constraint,
    raw: Tensor,
}

fn inv_softplus(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

impl ManifoldComponent {
    pub fn new(dim: usize, spec: ComponentSpec) -> Self {
        let raw = match spec.constraint {
            Constraint::Negative | Constraint::Positive => inv_softplus(spec.kappa.abs()),
            _ => spec.kappa,
        };
        Self { dim, constraint: spec.constraint, raw: Tensor::scalar(raw) }
    }

    pub fn kappa(&self) -> f64 {
        let s = self.raw.data()[0];
        match self.constraint {
            Constraint::Negative => -softplus(s),
            Constraint::Positive => softplus(s),
            _ => s,
        }
    }

    pub fn is_trainable(&self) -> bool {
        self.constraint != Constraint::Fixed
    }

    fn kappa_var<'t>(&self, raw: Var<'t>) -> Var<'t> {
        match self.constraint {
            Constraint::Negative => raw.softplus().neg(),
            Constraint::Positive => raw.softplus(),
            _ => raw,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotKind {
    Euclidean,
    Curvature,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentParams {
    pub manifold: ManifoldComponent,
    /// Input width of this component's slice of the features.
    pub in_dim: usize,
    pub weights: Vec<Tensor>,
    /// Hyperplane normals `a_k`, one row per class.
    pub normals: Option<Tensor>,
    /// Tangent vectors at 0 whose `exp_0` gives the offsets `p_k`.
    pub offsets: Option<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KgcnParams {
    pub components: Vec<ComponentParams>,
}

fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let b = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-b..b)).collect()).expect("finite")
}

impl KgcnParams {
    /// Glorot-uniform weights and normals, offsets at the origin.
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, in_dim: usize, classes: Option<usize>, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let k = cfg.components.len();
        if in_dim < k {
            return Err(ModelError::Config(format!("{in_dim} input features cannot be split across {k} components")));
        }
        let ins = split_even(in_dim, k);
        let widths: Vec<Vec<usize>> = cfg.hidden.iter().map(|&w| split_even(w, k)).collect();
        let mut components = Vec::with_capacity(k);
        for (c, spec) in cfg.components.iter().enumerate() {
            let mut prev = ins[c];
            let mut weights = Vec::new();
            for layer in &widths {
                weights.push(glorot(prev, layer[c], rng));
                prev = layer[c];
            }
            let normals = classes.map(|n| glorot(n, prev, rng));
            let offsets = classes.map(|n| Tensor::zeros(&[n, prev]));
            components.push(ComponentParams {
                manifold: ManifoldComponent::new(prev, *spec),
                in_dim: ins[c],
                weights,
                normals,
                offsets,
            });
        }
        Ok(Self { components })
    }

    pub fn kappas(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.manifold.kappa()).collect()
    }

    /// Every trainable tensor in a fixed order.
    pub fn slots(&self) -> Vec<(SlotKind, &Tensor)> {
        let mut out = Vec::new();
        for c in &self.components {
            if c.manifold.is_trainable() {
                out.push((SlotKind::Curvature, &c.manifold.raw));
            }
            out.extend(c.weights.iter().map(|w| (SlotKind::Euclidean, w)));
            out.extend(c.normals.iter().chain(&c.offsets).map(|t| (SlotKind::Euclidean, t)));
        }
        out
    }

    /// Same order as [`KgcnParams::slots`].
    pub fn slots_mut(&mut self) -> Vec<(SlotKind, &mut Tensor)> {
        let mut out = Vec::new();
        for c in &mut self.components {
            if c.manifold.is_trainable() {
                out.push((SlotKind::Curvature, &mut c.manifold.raw));
            }
            out.extend(c.weights.iter_mut().map(|w| (SlotKind::Euclidean, w)));
            out.extend(c.normals.iter_mut().chain(&mut c.offsets).map(|t| (SlotKind::Euclidean, t)));
        }
        out
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        let mut slots = Vec::new();
        let mut components = Vec::new();
        for c in &self.components {
            let raw = if c.manifold.is_trainable() {
                let v = tape.leaf(c.manifold.raw.clone());
                slots.push(v);
                v
            } else {
                tape.constant(c.manifold.raw.clone())
            };
            let weights: Vec<Var<'t>> = c.weights.iter().map(|w| tape.leaf(w.clone())).collect();
            slots.extend(&weights);
            let normals = c.normals.as_ref().map(|t| tape.leaf(t.clone()));
            let offsets = c.offsets.as_ref().map(|t| tape.leaf(t.clone()));
            slots.extend(normals.iter().chain(&offsets));
            components.push(BoundComponent {
                kappa: c.manifold.kappa_var(raw),
                in_dim: c.in_dim,
                weights,
                normals,
                offsets,
            });
        }
        Bound { components, slots }
    }
}

struct BoundComponent<'t> {
    kappa: Var<'t>,
    in_dim: usize,
    weights: Vec<Var<'t>>,
    normals: Option<Var<'t>>,
    offsets: Option<Var<'t>>,
}

/// Parameters recorded on a tape.
pub struct Bound<'t> {
    components: Vec<BoundComponent<'t>>,
    slots: Vec<Var<'t>>,
}

impl<'t> Bound<'t> {
    /// Leaves in the order of [`KgcnParams::slots`].
    pub fn slots(&self) -> &[Var<'t>] {
        &self.slots
    }

    pub fn kappas(&self) -> Vec<Var<'t>> {
        self.components.iter().map(|c| c.kappa).collect()
    }

    pub fn first_layer_weights(&self) -> Vec<Var<'t>> {
        self.components.iter().map(|c| c.weights[0]).collect()
    }
}

/// Drops off-diagonal entries with probability `rate` and rescales each row
/// so its sum is unchanged.
pub fn drop_adjacency<R: Rng + ?Sized>(a: &Csr, rate: f64, rng: &mut R) -> Csr {
    if rate == 0.0 {
        return a.clone();
    }
    let mut trip = Vec::with_capacity(a.nnz());
    for i in 0..a.rows() {
        let (cols, vals) = a.row(i);
        let total: f64 = vals.iter().sum();
        let kept: Vec<(usize, f64)> =
            cols.iter().zip(vals).filter(|(&j, _)| j == i || rng.gen::<f64>() >= rate).map(|(&j, &v)| (j, v)).collect();
        let sum: f64 = kept.iter().map(|e| e.1).sum();
        let s = if sum > 0.0 { total / sum } else { 1.0 };
        trip.extend(kept.into_iter().map(|(j, v)| (i, j, v * s)));
    }
    Csr::from_triplets(a.rows(), a.cols(), trip).expect("entries come from a valid matrix")
}

/// Node features split into one sparse column block per component, with
/// the row norms needed by the first layer.
#[derive(Debug, Clone, PartialEq)]
pub struct InputFeatures {
    rows: usize,
    blocks: Vec<FeatureBlock>,
}

#[derive(Debug, Clone, PartialEq)]
struct FeatureBlock {
    x: Arc<Csr>,
    norms: Tensor,
    max_norm: f64,
}

impl InputFeatures {
    pub fn new(x: &Tensor, in_dims: &[usize]) -> Result<Self> {
        let total: usize = in_dims.iter().sum();
        if x.shape().len() != 2 || x.cols() != total {
            return Err(ModelError::Config(format!("features of shape {:?} do not match {total} inputs", x.shape())));
        }
        let mut blocks = Vec::with_capacity(in_dims.len());
        let mut start = 0;
        for &d in in_dims {
            let mut trip = Vec::new();
            let mut norms = Vec::with_capacity(x.rows());
            for i in 0..x.rows() {
                let row = &x.row(i)[start..start + d];
                norms.push(row.iter().map(|v| v * v).sum::<f64>().sqrt());
                trip.extend(row.iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(j, &v)| (i, j, v)));
            }
            let max_norm = norms.iter().copied().fold(0.0, f64::max);
            blocks.push(FeatureBlock {
                x: Arc::new(Csr::from_triplets(x.rows(), d, trip)?),
                norms: Tensor::new(vec![x.rows(), 1], norms)?,
                max_norm,
            });
            start += d;
        }
        Ok(Self { rows: x.rows(), blocks })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
}

impl KgcnParams {
    pub fn input_features(&self, x: &Tensor) -> Result<InputFeatures> {
        InputFeatures::new(x, &self.components.iter().map(|c| c.in_dim).collect::<Vec<_>>())
    }
}

/// `X̃ ⊗ W` for sparse raw features, with `X̃` the optionally preprocessed
/// input. Row `i` of `log_0(s·X)` is `atan_k(s‖xᵢ‖)/‖xᵢ‖ · xᵢ`, so only the
/// row norms pass through the nonlinear maps.
fn first_layer<'t>(block: &FeatureBlock, w: Var<'t>, kappa: Var<'t>, preprocess: bool) -> Result<Var<'t>> {
    let tape = w.tape();
    let norms = tape.constant(block.norms.clone());
    let scale = if preprocess && kappa.item()? != 0.0 && block.max_norm > 0.0 {
        Some(tape.scalar(1.0).div(kappa.abs().sqrt()?.scale(2.0 * block.max_norm))?)
    } else {
        None
    };
    let scaled = match scale {
        Some(s) => norms.mul(s)?,
        None => norms,
    };
    let n = scaled.clamp(MIN_NORM, f64::INFINITY);
    let mut coef = n.atan_k(kappa)?.div(n)?;
    if let Some(s) = scale {
        coef = coef.mul(s)?;
    }
    let v = w.spmm(&block.x)?.mul(coef)?;
    Ok(exp0(v, kappa)?)
}

/// Final-layer embeddings, one `(rows, κ)` pair per component.
pub fn embed<'t>(
    cfg: &ModelConfig,
    params: &Bound<'t>,
    features: &InputFeatures,
    a_hat: &Arc<Csr>,
    mut rng: Option<&mut dyn RngCore>,
) -> Result<Vec<(Var<'t>, Var<'t>)>> {
    if features.rows != a_hat.rows() || features.blocks.len() != params.components.len() {
        return Err(ModelError::Config(format!(
            "features for {} nodes in {} blocks do not match {} nodes and {} components",
            features.rows,
            features.blocks.len(),
            a_hat.rows(),
            params.components.len()
        )));
    }
    let mut out = Vec::with_capacity(params.components.len());
    for (c, block) in params.components.iter().zip(&features.blocks) {
        if block.x.cols() != c.in_dim {
            return Err(ModelError::Config(format!("feature block of width {} for {} inputs", block.x.cols(), c.in_dim)));
        }
        let mut h: Option<Var<'t>> = None;
        for &w in &c.weights {
            let width = w.value().cols();
            let mask = match rng.as_deref_mut() {
                Some(r) if cfg.dropout_features > 0.0 => {
                    Some(dropout_mask(&[a_hat.rows(), width], cfg.dropout_features, r))
                }
                _ => None,
            };
            let hw = match h {
                None => first_layer(block, w, c.kappa, cfg.preprocess)?,
                Some(h) => right_matmul(h, w, c.kappa)?,
            };
            h = Some(layers::aggregate(hw, a_hat, cfg.nonlinearity, mask.as_ref(), c.kappa)?);
        }
        out.push((h.expect("at least one layer"), c.kappa));
    }
    Ok(out)
}

/// Pre-aggregation class scores summed over components, `[n, C]`.
pub fn logits<'t>(params: &Bound<'t>, embeddings: &[(Var<'t>, Var<'t>)]) -> Result<Var<'t>> {
    let mut total: Option<Var<'t>> = None;
    for (c, &(h, kappa)) in params.components.iter().zip(embeddings) {
        let (a, p) = match (c.normals, c.offsets) {
            (Some(a), Some(p)) => (a, p),
            _ => return Err(ModelError::Config("model was built without a classification head".into())),
        };
        let l = kappa_logits(h, a, exp0(p, kappa)?, kappa)?;
        total = Some(match total {
            Some(t) => t.add(l)?,
            None => l,
        });
    }
    total.ok_or_else(|| ModelError::Config("no components".into()))
}

/// `Â · logits`, the input of the final softmax.
pub fn class_scores<'t>(
    cfg: &ModelConfig,
    params: &Bound<'t>,
    features: &InputFeatures,
    a_hat: &Arc<Csr>,
    rng: Option<&mut dyn RngCore>,
) -> Result<Var<'t>> {
    let emb = embed(cfg, params, features, a_hat, rng)?;
    Ok(logits(params, &emb)?.spmm(a_hat)?)
}

/// Class probabilities `softmax(Â · logits)`.
pub fn forward<'t>(
    cfg: &ModelConfig,
    params: &Bound<'t>,
    features: &InputFeatures,
    a_hat: &Arc<Csr>,
    rng: Option<&mut dyn RngCore>,
) -> Result<Var<'t>> {
    Ok(class_scores(cfg, params, features, a_hat, rng)?.softmax())
}
