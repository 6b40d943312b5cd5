//! Average distortion of graph embeddings and its minimisation.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{EpochRecord, Optimizer, RunMetrics};
use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::graph::{bfs_all_pairs, normalize_adjacency, one_hot, DistanceMatrix, Graph};
use crate::manifold::trig::{atan_k, atan_k_partials};
use crate::manifold::{ANTIPODAL_EPS, BOUNDARY_EPS};
use crate::model::{embed, KgcnParams, ModelConfig, ModelError, Result};

/// Distinct connected node pairs `i < j` with their graph distances, grouped
/// by `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSet {
    start: Vec<usize>,
    j: Vec<u32>,
    target: Vec<f64>,
}

impl PairSet {
    pub fn from_distances(d: &DistanceMatrix) -> Self {
        let mut out = Self { start: vec![0], j: Vec::new(), target: Vec::new() };
        for a in 0..d.n() {
            for (b, &dist) in d.row(a).iter().enumerate().skip(a + 1) {
                if dist != DistanceMatrix::UNREACHABLE {
                    out.j.push(b as u32);
                    out.target.push(dist as f64);
                }
            }
            out.start.push(out.j.len());
        }
        out
    }

    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    fn nodes(&self) -> usize {
        self.start.len() - 1
    }
}

struct Part<'a> {
    x: &'a [f64],
    d: usize,
    kappa: f64,
    sq: Vec<f64>,
    dist: PairDistance,
}

/// `2·atan_k(u)` with its partials in `u` and κ, for one fixed κ.
#[derive(Clone, Copy)]
struct PairDistance {
    kappa: f64,
    root: f64,
    max_u: f64,
}

impl PairDistance {
    /// Below this `|κ|u²` the partials come from the series in `trig`.
    const DIRECT: f64 = 1e-3;

    fn new(kappa: f64) -> Self {
        let root = kappa.abs().sqrt();
        let max_u = if kappa < 0.0 { (1.0 - BOUNDARY_EPS) / root } else { f64::INFINITY };
        Self { kappa, root, max_u }
    }

    #[inline]
    /// Arguments are in the domain by construction; a failure shows up as
    /// NaN and is reported by the caller.
    fn eval(&self, u: f64) -> (f64, f64, f64) {
        let k = self.kappa;
        if u > self.max_u {
            // clamped at the projected ball radius
            let g = atan_k(self.max_u, k).unwrap_or(f64::NAN);
            return (2.0 * g, 0.0, -g / k);
        }
        let ku2 = k * u * u;
        if ku2.abs() < Self::DIRECT {
            let g = atan_k(u, k).unwrap_or(f64::NAN);
            let (du, dk) = atan_k_partials(u, k, g);
            return (2.0 * g, 2.0 * du, 2.0 * dk);
        }
        let z = self.root * u;
        let g = if k < 0.0 { z.atanh() } else { z.atan() } / self.root;
        let du = 1.0 / (1.0 + ku2);
        let dk = (u * du - g) / (2.0 * k);
        (2.0 * g, 2.0 * du, 2.0 * dk)
    }
}

/// Mean of `((d(xᵢ,xⱼ)/d_G(i,j))² − 1)²` over the pairs, where `d` combines the
/// factors as `sqrt(Σ d_c²)`. Returns the value and, if asked, the gradients
/// with respect to every factor's rows and curvature.
pub fn distortion_with_grads(
    parts: &[(&Tensor, f64)],
    pairs: &PairSet,
    want_grads: bool,
) -> std::result::Result<(f64, Option<(Vec<Tensor>, Vec<f64>)>), AutodiffError> {
    if pairs.is_empty() {
        return Err(AutodiffError::Shape("no connected pairs".into()));
    }
    let parts: Vec<Part> = parts
        .iter()
        .map(|(t, k)| {
            let (r, d) = t.dims2();
            let sq = (0..r).map(|i| t.row(i).iter().map(|a| a * a).sum()).collect();
            Part { x: t.data(), d, kappa: *k, sq, dist: PairDistance::new(*k) }
        })
        .collect();
    if parts.iter().any(|p| p.x.len() != pairs.nodes() * p.d) {
        return Err(AutodiffError::Shape(format!("embeddings do not have {} rows", pairs.nodes())));
    }
    let mut gx: Vec<Vec<f64>> =
        if want_grads { parts.iter().map(|p| vec![0.0; p.x.len()]).collect() } else { Vec::new() };
    let mut gi: Vec<Vec<f64>> = parts.iter().map(|p| vec![0.0; p.d]).collect();
    let mut gk = vec![0.0; parts.len()];
    let scale = 1.0 / pairs.len() as f64;
    let single = parts.len() == 1;
    let mut loss = 0.0;
    // per factor: (dist, u, r, den, xy, ∂dist/∂u, ∂dist/∂κ)
    let mut cache = vec![(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0); parts.len()];
    for i in 0..pairs.nodes() {
        gi.iter_mut().for_each(|g| g.fill(0.0));
        for p in pairs.start[i]..pairs.start[i + 1] {
            let j = pairs.j[p] as usize;
            let mut total2 = 0.0;
            for (part, slot) in parts.iter().zip(cache.iter_mut()) {
                let d = part.d;
                let xi = &part.x[i * d..(i + 1) * d];
                let xj = &part.x[j * d..(j + 1) * d];
                let (mut xy, mut r2) = (0.0, 0.0);
                for (a, b) in xi.iter().zip(xj) {
                    xy += a * b;
                    r2 += (a - b) * (a - b);
                }
                let k = part.kappa;
                let den = (1.0 + 2.0 * k * xy + k * k * part.sq[i] * part.sq[j]).max(ANTIPODAL_EPS);
                let r = r2.sqrt();
                let u = r / den.sqrt();
                let (dist, du, dk) = part.dist.eval(u);
                total2 += dist * dist;
                *slot = (dist, u, r, den, xy, du, dk);
            }
            let total = if single { cache[0].0 } else { total2.sqrt() };
            let t = pairs.target[p];
            let q = total / t;
            let e = q * q - 1.0;
            loss += e * e;
            if !want_grads || total == 0.0 {
                continue;
            }
            let dl_dd = scale * 4.0 * e * q / t;
            for (c, part) in parts.iter().enumerate() {
                let (dist, u, r, den, xy, du, dk) = cache[c];
                let g = if single { dl_dd } else { dl_dd * dist / total };
                let k = part.kappa;
                let (si, sj) = (part.sq[i], part.sq[j]);
                let h = u / (2.0 * den);
                gk[c] += g * (dk - du * h * (2.0 * xy + 2.0 * k * si * sj));
                if r == 0.0 || du == 0.0 {
                    continue;
                }
                let gu = g * du;
                let a = gu / (r * den.sqrt());
                let b = gu * h * 2.0 * k;
                let d = part.d;
                let xi = &part.x[i * d..(i + 1) * d];
                let xj = &part.x[j * d..(j + 1) * d];
                let gj = &mut gx[c][j * d..(j + 1) * d];
                for m in 0..d {
                    let (p, q) = (xi[m], xj[m]);
                    gi[c][m] += a * (p - q) - b * (q + k * sj * p);
                    gj[m] += a * (q - p) - b * (p + k * si * q);
                }
            }
        }
        if want_grads {
            for (c, part) in parts.iter().enumerate() {
                let d = part.d;
                for (acc, v) in gx[c][i * d..(i + 1) * d].iter_mut().zip(&gi[c]) {
                    *acc += v;
                }
            }
        }
    }
    let loss = loss * scale;
    if !loss.is_finite() {
        return Err(AutodiffError::NonFinite("distortion".into()));
    }
    let grads = want_grads.then(|| {
        let shapes: Vec<Vec<usize>> = parts.iter().map(|p| vec![p.x.len() / p.d.max(1), p.d]).collect();
        (gx.into_iter().zip(shapes).map(|(g, s)| Tensor::new(s, g).expect("finite")).collect(), gk)
    });
    Ok((loss, grads))
}

/// Tape-recorded distortion of `(rows, κ)` factors.
pub fn distortion_loss<'t>(parts: &[(Var<'t>, Var<'t>)], pairs: &PairSet) -> Result<Var<'t>> {
    let tape = parts.first().ok_or_else(|| ModelError::Config("no embedding".into()))?.0.tape();
    let values: Vec<_> = parts.iter().map(|(x, _)| x.value()).collect();
    let kappas: Vec<f64> = parts.iter().map(|(_, k)| k.item()).collect::<std::result::Result<_, _>>()?;
    let inputs: Vec<(&Tensor, f64)> = values.iter().map(|v| &**v).zip(kappas.iter().copied()).collect();
    let need = parts.iter().any(|(x, k)| x.requires_grad() || k.requires_grad());
    let (loss, grads) = distortion_with_grads(&inputs, pairs, need)?;
    let mut vars = Vec::with_capacity(2 * parts.len());
    let mut gs = Vec::with_capacity(2 * parts.len());
    if let Some((gx, gk)) = grads {
        for ((&(x, k), g), gkc) in parts.iter().zip(gx).zip(gk) {
            vars.push(x);
            gs.push(g);
            vars.push(k);
            gs.push(Tensor::full(&k.shape(), gkc));
        }
    }
    Ok(tape.fused_scalar("distortion", loss, &vars, gs))
}

/// Minimises distortion on `g` with 1-hot node features and reports the best
/// value seen.
pub fn train_distortion(g: &Graph, cfg: &ModelConfig) -> Result<RunMetrics> {
    cfg.validate()?;
    let pairs = PairSet::from_distances(&bfs_all_pairs(g));
    if pairs.is_empty() {
        return Err(ModelError::Config("graph has no connected pair of distinct nodes".into()));
    }
    let a_hat = Arc::new(normalize_adjacency(g, cfg.adjacency));
    let x = one_hot(g.n());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = KgcnParams::init(cfg, g.n(), None, &mut rng)?;
    let x = params.input_features(&x)?;
    let mut opt = Optimizer::new(cfg.lr_euclidean, cfg.lr_curvature);
    let mut metrics = RunMetrics::new("distortion", cfg.seed);
    let mut best = f64::INFINITY;
    for epoch in 0..cfg.epochs {
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let dropout = cfg.dropout_features > 0.0;
        let emb = embed(cfg, &bound, &x, &a_hat, if dropout { Some(&mut rng) } else { None })?;
        let loss = distortion_loss(&emb, &pairs)?;
        let value = loss.item()?;
        let kappas = params.kappas();
        if value < best {
            best = value;
            metrics.best_epoch = epoch;
            metrics.kappas = kappas.clone();
        }
        metrics.history.push(EpochRecord { epoch, loss: value, metric: best, kappas });
        let grads = tape.backward(loss)?;
        let gs: Vec<Tensor> = bound.slots().iter().map(|&v| grads.wrt(v)).collect();
        if let Some(bad) = gs.iter().position(|t| !t.is_finite()) {
            return Err(AutodiffError::NonFinite(format!("gradient of parameter {bad} at epoch {epoch}")).into());
        }
        opt.step(&mut params, &gs)?;
    }
    metrics.epochs = metrics.history.len();
    metrics.final_loss = metrics.history.last().map(|r| r.loss).unwrap_or(f64::NAN);
    metrics.best_distortion = Some(best);
    metrics.final_kappas = params.kappas();
    Ok(metrics)
}
