//! Invariant suites behind `kgcn selftest`.
//!
//! Every suite is a pure function of its seed, so two runs with the same seed
//! produce identical reports. Wall-clock time is measured by the caller and
//! kept out of the reports.

use std::error::Error;
use std::sync::Arc;
use std::time::{Duration, Instant};

use kgcn_core::agg::{self, diff as agg_diff, PointMatrix, WeightRow};
use kgcn_core::autodiff::{self, finite_diff, grad_error, AutodiffError, Csr, Tape, Tensor, Var};
use kgcn_core::graph::{bfs_all_pairs, normalize_adjacency, path_graph, AdjacencyMode, Graph};
use kgcn_core::manifold::{self as m, diff as md, random_isometry, sample_point, Curvature, Point};
use kgcn_core::model::{
    class_scores, kappa_logits, kgcn_layer, mobius_nonlin, preprocess_features, ComponentSpec, Constraint, Family,
    KgcnParams, ModelConfig, ModelError, Nonlinearity,
};
use kgcn_core::train::{distortion_loss, PairSet};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

type Sample = Result<f64, Box<dyn Error>>;

/// One named property evaluated over a number of samples.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub samples: usize,
    pub max_error: f64,
    pub tolerance: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    /// Which sample produced `max_error`, when the suite labels its samples.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub worst: Option<String>,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.failure.is_none() && self.max_error <= self.tolerance
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub name: String,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    pub fn passed(&self) -> usize {
        self.checks.iter().filter(|c| c.passed()).count()
    }

    pub fn failed(&self) -> usize {
        self.checks.len() - self.passed()
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

struct Tracker(Check);

impl Tracker {
    fn new(name: &str, tolerance: f64) -> Self {
        Self(Check { name: name.to_string(), samples: 0, max_error: 0.0, tolerance, failure: None, worst: None })
    }

    fn record(&mut self, sample: Sample) {
        self.record_labelled(None, sample)
    }

    fn record_labelled(&mut self, label: Option<String>, sample: Sample) {
        self.0.samples += 1;
        match sample {
            Ok(e) if e.is_finite() => {
                if e > self.0.max_error {
                    self.0.max_error = e;
                    self.0.worst = label;
                }
            }
            Ok(e) => {
                self.0.failure.get_or_insert_with(|| format!("sample {} gave error {e}", self.0.samples));
            }
            Err(e) => {
                self.0.failure.get_or_insert_with(|| format!("sample {}: {e}", self.0.samples));
            }
        }
    }

    fn finish(self) -> Check {
        self.0
    }
}

/// Runs every suite, returning each report with its wall-clock time.
pub fn run_all(seed: u64) -> Vec<(SuiteReport, Duration)> {
    let suites: [(u64, fn(u64) -> SuiteReport); 5] = [
        (0, |s| oracle_suite(s, 1000)),
        (1, |s| gyro_suite(s, 50)),
        (2, taylor_suite),
        (3, |s| gradient_suite(s, 20)),
        (4, limit_suite),
    ];
    suites
        .iter()
        .map(|&(offset, suite)| {
            let start = Instant::now();
            let report = suite(seed.wrapping_add(offset));
            (report, start.elapsed())
        })
        .collect()
}

pub const ORACLE_SPHERE: &str = "distance vs great circle on the lifted sphere";
pub const ORACLE_HYPERBOLOID: &str = "distance vs arccosh on the lifted hyperboloid";

/// Distances against the ambient sphere and hyperboloid models at |κ| = 1.
pub fn oracle_suite(seed: u64, pairs: usize) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();
    for (kappa, name) in [(1.0, ORACLE_SPHERE), (-1.0, ORACLE_HYPERBOLOID)] {
        let mut t = Tracker::new(name, 1e-9);
        for _ in 0..pairs {
            t.record(oracle_gap(&mut rng, kappa));
        }
        checks.push(t.finish());
    }
    SuiteReport { name: "oracle".into(), checks }
}

fn oracle_gap(rng: &mut ChaCha8Rng, kappa: f64) -> Sample {
    let x = sample_point(rng, 3, kappa, 2.0)?;
    let y = sample_point(rng, 3, kappa, 2.0)?;
    let direct = m::distance(&x, &y)?;
    let lifted = m::ambient_distance(&m::stereo_lift(&x)?, &m::stereo_lift(&y)?)?;
    Ok((direct - lifted).abs())
}

pub const LEFT_CANCELLATION: &str = "left cancellation";
pub const GYRATION_NORM: &str = "gyration preserves the norm";
pub const GYRATION_FORMS: &str = "gyration closed form vs definition";
pub const ORTHOGONAL_COMMUTATION: &str = "orthogonal maps commute with addition";
pub const EXP_LOG: &str = "exp/log round trip";
pub const SCALING_DISTANCE: &str = "scaling multiplies the distance to the origin";
pub const NEUTER: &str = "identity matrix is neutral";
pub const SCALAR_ASSOCIATIVITY: &str = "scalar associativity of left multiplication";
pub const INTRINSIC: &str = "left multiplication is intrinsic";
pub const TANGENTIAL_EQUIVARIANCE: &str = "tangential aggregation is equivariant";

/// Gyrovector identities and the isometry properties of the aggregations.
pub fn gyro_suite(seed: u64, isometries: usize) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();

    let mut t = Tracker::new(LEFT_CANCELLATION, 1e-10);
    for k in [-2.0, -1.0, -0.1, 0.1, 1.0] {
        for _ in 0..20 {
            t.record(left_cancellation(&mut rng, k));
        }
    }
    checks.push(t.finish());

    let mut norm = Tracker::new(GYRATION_NORM, 1e-10);
    let mut forms = Tracker::new(GYRATION_FORMS, 1e-10);
    let mut comm = Tracker::new(ORTHOGONAL_COMMUTATION, 1e-12);
    let mut scaling = Tracker::new(SCALING_DISTANCE, 1e-10);
    for k in [-1.0, 0.5] {
        for _ in 0..20 {
            let (g, f) = gyration_gaps(&mut rng, k);
            norm.record(g);
            forms.record(f);
            comm.record(commutation_gap(&mut rng, k));
            scaling.record(scaling_gap(&mut rng, k));
        }
    }
    checks.extend([norm.finish(), forms.finish(), comm.finish(), scaling.finish()]);

    let mut t = Tracker::new(EXP_LOG, 1e-9);
    for k in [-1.0, 1.0] {
        for _ in 0..20 {
            t.record(exp_log_gap(&mut rng, k));
        }
    }
    checks.push(t.finish());

    let mut neuter = Tracker::new(NEUTER, 1e-10);
    let mut assoc = Tracker::new(SCALAR_ASSOCIATIVITY, 1e-10);
    for k in [-1.0, 0.5] {
        for _ in 0..5 {
            neuter.record(neuter_gap(&mut rng, k));
            assoc.record(scalar_assoc_gap(&mut rng, k, 0.7));
        }
    }
    checks.extend([neuter.finish(), assoc.finish()]);

    let mut intrinsic = Tracker::new(INTRINSIC, 1e-8);
    let mut tangential = Tracker::new(TANGENTIAL_EQUIVARIANCE, 1e-8);
    for i in 0..isometries {
        let k = if i % 2 == 0 { -1.0 } else { 0.5 };
        intrinsic.record(intrinsic_gap(&mut rng, k));
        tangential.record(tangential_gap(&mut rng, k));
    }
    checks.extend([intrinsic.finish(), tangential.finish()]);

    SuiteReport { name: "gyro".into(), checks }
}

fn left_cancellation(rng: &mut ChaCha8Rng, k: f64) -> Sample {
    let x = sample_point(rng, 3, k, 1.0)?;
    let y = sample_point(rng, 3, k, 1.0)?;
    let back = m::kappa_add(&x, &m::kappa_add(&x.neg(), &y)?)?;
    Ok((back.coords() - y.coords()).amax())
}

fn gyration_gaps(rng: &mut ChaCha8Rng, k: f64) -> (Sample, Sample) {
    let points: Result<Vec<Point>, _> = (0..3).map(|_| sample_point(rng, 3, k, 1.0)).collect();
    let points = match points {
        Ok(p) => p,
        Err(e) => return (Err(e.clone().into()), Err(e.into())),
    };
    let (u, v, w) = (&points[0], &points[1], &points[2]);
    let closed = m::gyration(u, v, w);
    let norm = closed.as_ref().map(|g| (g.norm() - w.norm()).abs()).map_err(|e| e.clone().into());
    let forms = (|| -> Sample {
        let by_def = m::gyration_by_definition(u, v, w)?;
        Ok((closed.clone()?.coords() - by_def.coords()).amax())
    })();
    (norm, forms)
}

fn commutation_gap(rng: &mut ChaCha8Rng, k: f64) -> Sample {
    let r = random_isometry(rng, 3, k)?.rotation().clone();
    let x = sample_point(rng, 3, k, 1.0)?;
    let y = sample_point(rng, 3, k, 1.0)?;
    let lhs = m::kappa_add(&x.transform(&r), &y.transform(&r))?;
    let rhs = m::kappa_add(&x, &y)?.transform(&r);
    Ok((lhs.coords() - rhs.coords()).amax())
}

fn scaling_gap(rng: &mut ChaCha8Rng, k: f64) -> Sample {
    let x = sample_point(rng, 3, k, 0.8)?;
    let r: f64 = rng.gen_range(-2.0..2.0);
    let origin = Point::origin(3, x.kappa());
    let scaled = m::distance(&origin, &m::kappa_scale(r, &x)?)?;
    Ok((scaled - r.abs() * m::distance(&origin, &x)?).abs())
}

/// Point with Euclidean norm at most `max_norm`.
fn ball_point(rng: &mut ChaCha8Rng, d: usize, k: f64, max_norm: f64) -> Result<Point, Box<dyn Error>> {
    let dir = DVector::<f64>::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
    let n = dir.norm().max(1e-12);
    Ok(Point::new(dir * (rng.gen_range(0.0..max_norm) / n), Curvature::new(k)?)?)
}

fn exp_log_gap(rng: &mut ChaCha8Rng, k: f64) -> Sample {
    let x = ball_point(rng, 3, k, 0.5)?;
    let y = ball_point(rng, 3, k, 0.5)?;
    let back = m::exp_map(&x, &m::log_map(&x, &y)?)?;
    Ok((back.coords() - y.coords()).amax())
}

fn point_rows(rng: &mut ChaCha8Rng, n: usize, d: usize, k: f64, radius: f64) -> Result<PointMatrix, Box<dyn Error>> {
    let points: Vec<Point> = (0..n).map(|_| sample_point(rng, d, k, radius)).collect::<Result<_, _>>()?;
    Ok(PointMatrix::from_points(&points)?)
}

fn stochastic(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let mut a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(0.05..1.0));
    for mut row in a.row_iter_mut() {
        let s = row.sum();
        row /= s;
    }
    a
}

fn neuter_gap(rng: &mut ChaCha8Rng, k: f64) -> Sample {
    let x = point_rows(rng, 5, 3, k, 0.8)?;
    let out = agg::left_matmul(&DMatrix::identity(5, 5), &x)?;
    Ok((out.coords() - x.coords()).amax())
}

fn scalar_assoc_gap(rng: &mut ChaCha8Rng, k: f64, r: f64) -> Sample {
    let x = point_rows(rng, 5, 3, k, 0.8)?;
    let a = DMatrix::from_fn(5, 5, |_, _| rng.gen_range(0.05..1.0));
    let lhs = agg::left_matmul(&a, &x)?.map_rows(|p| m::kappa_scale(r, p))?;
    let rhs = agg::left_matmul(&(a * r), &x)?;
    Ok((lhs.coords() - rhs.coords()).amax())
}

fn intrinsic_gap(rng: &mut ChaCha8Rng, k: f64) -> Sample {
    let x = point_rows(rng, 5, 3, k, 0.8)?;
    let y = point_rows(rng, 5, 3, k, 0.8)?;
    let (a, b) = (stochastic(rng, 5), stochastic(rng, 5));
    let phi = random_isometry(rng, 3, k)?;
    let rowwise = |x: &PointMatrix, y: &PointMatrix| -> Result<Vec<f64>, Box<dyn Error>> {
        let (ax, by) = (agg::left_matmul(&a, x)?, agg::left_matmul(&b, y)?);
        Ok((0..5).map(|i| m::distance(&ax.row(i), &by.row(i))).collect::<Result<_, _>>()?)
    };
    let plain = rowwise(&x, &y)?;
    let moved = rowwise(&x.map_rows(|p| phi.apply(p))?, &y.map_rows(|p| phi.apply(p))?)?;
    Ok(plain.iter().zip(&moved).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max))
}

fn tangential_gap(rng: &mut ChaCha8Rng, k: f64) -> Sample {
    let base = sample_point(rng, 3, k, 0.8)?;
    let x = point_rows(rng, 5, 3, k, 0.8)?;
    let alpha = WeightRow::new((0..5).map(|_| rng.gen_range(0.0..0.5)).collect())?;
    let phi = random_isometry(rng, 3, k)?;
    let moved = agg::tangential_agg(&phi.apply(&base)?, &x.map_rows(|p| phi.apply(p))?, &alpha)?;
    let expect = phi.apply(&agg::tangential_agg(&base, &x, &alpha)?)?;
    Ok((moved.coords() - expect.coords()).amax())
}

pub const TAYLOR_SLOPE: &str = "remainder of the first-order expansion is quadratic";
pub const ONE_SIDED_DERIVATIVES: &str = "one-sided curvature derivatives agree at zero";
pub const CENTRAL_DERIVATIVE: &str = "central difference matches the first-order coefficient";

/// Behaviour of the distance as the curvature crosses zero.
pub fn taylor_suite(seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut slope = Tracker::new(TAYLOR_SLOPE, 0.2);
    let mut sided = Tracker::new(ONE_SIDED_DERIVATIVES, 1e-4);
    let mut central = Tracker::new(CENTRAL_DERIVATIVE, 1e-4);
    for _ in 0..5 {
        let x = DVector::from_fn(3, |_, _| rng.gen_range(-0.3..0.3));
        let y = DVector::from_fn(3, |_, _| rng.gen_range(-0.3..0.3));
        for sign in [1.0, -1.0] {
            slope.record(remainder_slope(&x, &y, sign));
        }
        sided.record(one_sided_gap(&x, &y));
        central.record(central_gap(&x, &y));
    }
    SuiteReport { name: "taylor".into(), checks: vec![slope.finish(), sided.finish(), central.finish()] }
}

fn distance_at(x: &DVector<f64>, y: &DVector<f64>, k: f64) -> Sample {
    let c = Curvature::new(k)?;
    Ok(m::distance(&Point::new(x.clone(), c)?, &Point::new(y.clone(), c)?)?)
}

/// `−2(‖x − y‖³/3 + ⟨x, y⟩‖x − y‖)`, the derivative of the distance in κ at 0.
///
/// Expanding `‖(−x) ⊕ y‖` gives `r − κ⟨x, y⟩r` and `atan_κ(u)` gives
/// `u − κu³/3`; doubling the composition yields the coefficient.
fn first_order(x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    let r = (x - y).norm();
    -2.0 * (r.powi(3) / 3.0 + x.dot(y) * r)
}

/// `|slope − 2|` of the least-squares line through `log|remainder|` vs `log|κ|`.
fn remainder_slope(x: &DVector<f64>, y: &DVector<f64>, sign: f64) -> Sample {
    let d0 = 2.0 * (x - y).norm();
    let c1 = first_order(x, y);
    let mut pts = Vec::new();
    for mag in [1e-3, 1e-4, 1e-5] {
        let k = sign * mag;
        let rem = (distance_at(x, y, k)? - d0 - c1 * k).abs();
        pts.push((mag.ln(), rem.max(f64::MIN_POSITIVE).ln()));
    }
    let n = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Ok((sxy / sxx - 2.0).abs())
}

fn tape_kappa_derivative(x: &DVector<f64>, y: &DVector<f64>, k: f64) -> Sample {
    let tape = Tape::new();
    let row = |v: &DVector<f64>| tape.constant(Tensor::matrix(1, v.len(), v.iter().copied().collect()).expect("finite"));
    let kv = tape.leaf(Tensor::scalar(k));
    let d = md::distance(row(x), row(y), kv)?.sum();
    Ok(tape.backward(d)?.wrt(kv).item()?)
}

fn relative(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

fn one_sided_gap(x: &DVector<f64>, y: &DVector<f64>) -> Sample {
    Ok(relative(tape_kappa_derivative(x, y, 1e-8)?, tape_kappa_derivative(x, y, -1e-8)?))
}

fn central_gap(x: &DVector<f64>, y: &DVector<f64>) -> Sample {
    let h = 1e-6;
    let fd = (distance_at(x, y, h)? - distance_at(x, y, -h)?) / (2.0 * h);
    Ok(relative(fd, first_order(x, y)))
}

pub const OP_GRADIENTS: &str = "operation gradients match central differences";
pub const MODEL_GRADIENTS: &str = "two-layer model gradients match central differences";

type Op<'a> = dyn for<'t> Fn(&'t Tape, &[Var<'t>]) -> autodiff::Result<Var<'t>> + 'a;

/// Finite-difference checks of every differentiable operation and of the
/// end-to-end model over `configs` random configurations.
pub fn gradient_suite(seed: u64, configs: usize) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ops = Tracker::new(OP_GRADIENTS, 1e-4);
    let mut model = Tracker::new(MODEL_GRADIENTS, 1e-3);
    const CURVATURES: [f64; 7] = [-1.2, -0.5, -1e-3, 0.0, 1e-3, 0.4, 0.9];
    for c in 0..configs {
        let k = CURVATURES[c % CURVATURES.len()] * rng.gen_range(0.8..1.2);
        for (name, result) in op_gradient_errors(&mut rng, k) {
            let label = format!("{name} at kappa {k}");
            ops.record_labelled(Some(label.clone()), result.map_err(|e| format!("{label}: {e}").into()));
        }
        let family = [Family::Euclidean, Family::Hyperbolic, Family::Spherical, Family::ProductHs][c % 4];
        model.record(model_gradient_error(&mut rng, family));
    }
    SuiteReport { name: "gradients".into(), checks: vec![ops.finish(), model.finish()] }
}

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect()).expect("finite")
}

fn point_tensor(rng: &mut ChaCha8Rng, rows: usize, d: usize, k: f64) -> Result<Tensor, Box<dyn Error>> {
    let p = point_rows(rng, rows, d, k, 0.7)?;
    Ok(Tensor::from_dmatrix(p.coords()))
}

/// Fixed non-uniform weights so that the scalar loss sees every output entry.
fn weighted_sum<'t>(out: Var<'t>) -> autodiff::Result<Var<'t>> {
    let n = out.value().len();
    let w = (0..n).map(|i| ((i * 7919 + 3) % 13) as f64 / 13.0 - 0.4).collect();
    let w = out.tape().constant(Tensor::new(out.shape(), w)?);
    Ok(out.mul(w)?.sum())
}

fn fd_error(inputs: &[Tensor], f: &Op<'_>) -> Sample {
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = weighted_sum(f(&tape, &vars)?)?;
    let grads = tape.backward(out)?;
    let mut worst = 0.0f64;
    for (i, v) in vars.iter().enumerate() {
        let eval = |t: &Tensor| -> f64 {
            let tape = Tape::new();
            let vars: Vec<Var> = inputs
                .iter()
                .enumerate()
                .map(|(j, x)| tape.constant(if i == j { t.clone() } else { x.clone() }))
                .collect();
            f(&tape, &vars).and_then(weighted_sum).and_then(|v| v.item()).unwrap_or(f64::NAN)
        };
        let numeric = finite_diff(eval, &inputs[i], 1e-6);
        worst = worst.max(grad_error(&grads.wrt(*v), &numeric, 1e-4));
    }
    Ok(worst)
}

fn random_adjacency(rng: &mut ChaCha8Rng, n: usize) -> Arc<Csr> {
    let mut trip = Vec::new();
    for i in 0..n {
        trip.push((i, i, rng.gen_range(0.3..1.0)));
        for j in 0..n {
            if i != j && rng.gen_bool(0.4) {
                trip.push((i, j, rng.gen_range(0.1..1.0)));
            }
        }
    }
    Arc::new(Csr::from_triplets(n, n, trip).expect("indices in range"))
}

fn op_gradient_errors(rng: &mut ChaCha8Rng, k: f64) -> Vec<(&'static str, Sample)> {
    let prepared = (|| -> Result<_, Box<dyn Error>> {
        Ok((point_tensor(rng, 4, 3, k)?, point_tensor(rng, 4, 3, k)?, random_tensor(rng, 3, 3, 1.0)))
    })();
    let (x, y, w) = match prepared {
        Ok(v) => v,
        Err(e) => return vec![("inputs", Err(e))],
    };
    let a = random_adjacency(rng, 4);
    let alpha: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..0.5)).collect();
    let first = Arc::new(Csr::from_triplets(1, 4, vec![(0, 0, 1.0)]).expect("in range"));
    let pairs = PairSet::from_distances(&bfs_all_pairs(&path_graph(4)));
    let inputs = [x, y, w, Tensor::scalar(k)];

    let ops: Vec<(&str, Box<Op<'_>>)> = vec![
        ("kappa_add", Box::new(|_, v| md::kappa_add(v[0], v[1], v[3]))),
        ("kappa_scale", Box::new(|_, v| md::kappa_scale(v[1].sum_rows(), v[0], v[3]))),
        ("exp_map", Box::new(|_, v| md::exp_map(v[0], v[1], v[3]))),
        ("log_map", Box::new(|_, v| md::log_map(v[0], v[1], v[3]))),
        ("exp0", Box::new(|_, v| md::exp0(v[1], v[3]))),
        ("log0", Box::new(|_, v| md::log0(v[0], v[3]))),
        ("distance", Box::new(|_, v| md::distance(v[0], v[1], v[3]))),
        ("gyro_norm_diff", Box::new(|_, v| md::gyro_norm_diff(v[0], v[1], v[3]))),
        ("conformal_factor", Box::new(|_, v| md::conformal_factor(v[0], v[3]))),
        ("project", Box::new(|_, v| md::project(v[0].scale(3.0), v[3]))),
        ("tan_k", Box::new(|_, v| v[0].scale(0.5).tan_k(v[3]))),
        ("atan_k", Box::new(|_, v| v[0].atan_k(v[3]))),
        ("asin_k", Box::new(|_, v| v[0].asin_k(v[3]))),
        ("right_matmul", Box::new(|_, v| agg_diff::right_matmul(v[0], v[2], v[3]))),
        ("left_matmul", Box::new(|_, v| agg_diff::left_matmul(&a, v[0], v[3]))),
        ("gyromidpoints", Box::new(|_, v| agg_diff::gyromidpoints(&a, v[0], v[3]))),
        ("tangential_agg", Box::new(|_, v| agg_diff::tangential_agg(v[0].spmm(&first)?, v[1], &alpha, v[3]))),
        ("mobius_nonlin", Box::new(|_, v| Ok(mobius_nonlin(v[0], Nonlinearity::Tanh, None, v[3])?))),
        ("kgcn_layer", Box::new(|_, v| Ok(kgcn_layer(v[0], v[2], &a, Nonlinearity::Tanh, None, v[3])?))),
        (
            "kappa_logits",
            Box::new(|_, v| Ok(kappa_logits(v[0], v[2], md::exp0(v[2].scale(0.2), v[3])?, v[3])?)),
        ),
        ("preprocess_features", Box::new(|_, v| Ok(preprocess_features(v[2], v[3])?))),
        ("distortion_loss", Box::new(|_, v| distortion_loss(&[(v[0], v[3])], &pairs).map_err(numeric))),
    ];
    ops.iter().map(|(name, op)| (*name, fd_error(&inputs, op.as_ref()))).collect()
}

fn numeric(e: ModelError) -> AutodiffError {
    match e {
        ModelError::Numeric(e) => e,
        other => AutodiffError::Shape(other.to_string()),
    }
}

fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> Graph {
    let mut edges: Vec<(usize, usize)> = (1..n).map(|i| (i - 1, i)).collect();
    for i in 0..n {
        for j in i + 2..n {
            if rng.gen_bool(0.25) {
                edges.push((i, j));
            }
        }
    }
    Graph::new(n, edges).expect("indices in range")
}

fn model_gradient_error(rng: &mut ChaCha8Rng, family: Family) -> Sample {
    let n = 8;
    let a = Arc::new(normalize_adjacency(&random_graph(rng, n), AdjacencyMode::Symmetric));
    let x = random_tensor(rng, n, 4, 1.0);
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let mut cfg = ModelConfig::nodeclass(family);
    cfg.hidden = vec![4, 4];
    cfg.nonlinearity = Nonlinearity::Tanh;
    let mut params = KgcnParams::init(&cfg, 4, Some(2), rng)?;
    for c in &mut params.components {
        c.offsets = Some(random_tensor(rng, 2, c.manifold.dim, 0.3));
    }
    fn xent_and_slots<'t>(
        cfg: &ModelConfig,
        p: &KgcnParams,
        tape: &'t Tape,
        x: &Tensor,
        a: &Arc<Csr>,
        labels: &[usize],
    ) -> Result<Vec<Var<'t>>, Box<dyn Error>> {
        let b = p.bind(tape);
        let s = class_scores(cfg, &b, &p.input_features(x)?, a, None)?;
        let rows: Vec<usize> = (0..labels.len()).collect();
        let mut out = vec![s.softmax_xent(&rows, labels)?];
        out.extend(b.slots());
        Ok(out)
    }
    let tape = Tape::new();
    let vars = xent_and_slots(&cfg, &params, &tape, &x, &a, &labels)?;
    let grads = tape.backward(vars[0])?;
    let mut worst = 0.0f64;
    for (i, &v) in vars[1..].iter().enumerate() {
        let theta = params.slots()[i].1.clone();
        let numeric = finite_diff(
            |t| {
                let mut q = params.clone();
                *q.slots_mut()[i].1 = t.clone();
                let tape = Tape::new();
                xent_and_slots(&cfg, &q, &tape, &x, &a, &labels).ok().and_then(|v| v[0].item().ok()).unwrap_or(f64::NAN)
            },
            &theta,
            1e-6,
        );
        worst = worst.max(grad_error(&grads.wrt(v), &numeric, 1e-4));
    }
    Ok(worst)
}

pub const EUCLIDEAN_LIMIT: &str = "near-zero curvature matches a Euclidean GCN";

/// The full model at |κ| = 1e-7 against a plain two-layer GCN with the same
/// weights.
pub fn limit_suite(seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tracker::new(EUCLIDEAN_LIMIT, 1e-4);
    for _ in 0..3 {
        for k in [1e-7, -1e-7] {
            t.record(limit_gap(&mut rng, k));
        }
    }
    SuiteReport { name: "limit".into(), checks: vec![t.finish()] }
}

/// `Â·(4·H·Aᵀ − 4⟨p_k, a_k⟩)` with `H` from ReLU GCN layers `relu(Â·H·W)`.
fn euclidean_gcn(a: &Csr, x: &Tensor, params: &KgcnParams) -> DMatrix<f64> {
    let c = &params.components[0];
    let ad = a.to_dense().to_dmatrix();
    let mut h = x.to_dmatrix();
    for w in &c.weights {
        h = (&ad * h * w.to_dmatrix()).map(|v| v.max(0.0));
    }
    let normals = c.normals.as_ref().expect("head").to_dmatrix();
    let offsets = c.offsets.as_ref().expect("head").to_dmatrix();
    let mut logits = &h * normals.transpose() * 4.0;
    for k in 0..normals.nrows() {
        let b = 4.0 * offsets.row(k).dot(&normals.row(k));
        logits.column_mut(k).add_scalar_mut(-b);
    }
    &ad * logits
}

fn limit_gap(rng: &mut ChaCha8Rng, k: f64) -> Sample {
    let n = 10;
    let a = Arc::new(normalize_adjacency(&random_graph(rng, n), AdjacencyMode::Symmetric));
    let x = random_tensor(rng, n, 4, 1.0);
    let mut cfg = ModelConfig::nodeclass(Family::Euclidean);
    cfg.components = vec![ComponentSpec::new(k, Constraint::Free)];
    cfg.hidden = vec![8, 6];
    cfg.preprocess = false;
    let mut params = KgcnParams::init(&cfg, 4, Some(3), rng)?;
    params.components[0].offsets = Some(random_tensor(rng, 3, 6, 0.5));
    let tape = Tape::new();
    let b = params.bind(&tape);
    let scores = class_scores(&cfg, &b, &params.input_features(&x)?, &a, None)?.value().to_dmatrix();
    Ok((scores - euclidean_gcn(&a, &x, &params)).amax())
}
