//! The κ-stereographic model `st^d_κ`.
//!
//! One chart covers every constant curvature: the Poincaré ball of radius
//! `1/√−κ` for κ < 0, plain `R^d` for κ = 0 and the stereographic projection of
//! the sphere of radius `1/√κ` for κ > 0. Points carry their curvature and every
//! binary operation checks that both operands agree on it.
//!
//! Functions here work on single points in `f64`. Tape-recorded counterparts
//! used for training live in [`diff`].

pub mod diff;
mod isometry;
pub mod trig;

use std::sync::atomic::{AtomicBool, Ordering};

use nalgebra::DVector;
use thiserror::Error;

pub use isometry::{random_isometry, sample_point, Isometry};
pub use trig::{asin_k, atan_k, tan_k, TAYLOR_EPS};

/// Points returned for κ < 0 are kept within `(1 − BOUNDARY_EPS)/√−κ` of the origin.
pub const BOUNDARY_EPS: f64 = 1e-5;

/// Threshold on the κ-addition denominator below which the pair is antipodal.
pub const ANTIPODAL_EPS: f64 = 1e-15;

/// Vectors shorter than this are treated as zero in `v/‖v‖` factors.
pub const MIN_NORM: f64 = 1e-15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("kappa-addition is undefined for an antipodal pair (denominator {denominator:e})")]
    Antipodal { denominator: f64 },
    #[error("degenerate gyromidpoint{}: weighted sum of (lambda - 1) is {value:e}", row_suffix(.row))]
    DegenerateMidpoint { row: Option<usize>, value: f64 },
    #[error("weights sum to zero{}", row_suffix(.row))]
    ZeroWeight { row: Option<usize> },
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("curvature mismatch: {0} vs {1}")]
    CurvatureMismatch(f64, f64),
    #[error("invalid point: {0}")]
    InvalidPoint(String),
}

fn row_suffix(row: &Option<usize>) -> String {
    match row {
        Some(r) => format!(" in row {r}"),
        None => String::new(),
    }
}

pub type Result<T> = std::result::Result<T, GeometryError>;

/// Sectional curvature κ. Any finite value, including exactly zero.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Curvature(f64);

impl Curvature {
    pub fn new(kappa: f64) -> Result<Self> {
        if !kappa.is_finite() {
            return Err(GeometryError::Domain(format!("curvature must be finite, got {kappa}")));
        }
        Ok(Self(kappa))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Whether the series branch is active for an argument of size `u`.
    pub fn is_taylor(self, u: f64) -> bool {
        self.0.abs() * u * u < TAYLOR_EPS
    }

    /// Largest admissible norm: finite for κ < 0, infinite otherwise.
    pub fn radius(self) -> f64 {
        if self.0 < 0.0 {
            1.0 / (-self.0).sqrt()
        } else {
            f64::INFINITY
        }
    }
}

impl std::fmt::Display for Curvature {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A point of `st^d_κ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    coords: DVector<f64>,
    kappa: Curvature,
}

impl Point {
    /// Validates that `coords` is finite and, for κ < 0, strictly inside the ball.
    pub fn new(coords: DVector<f64>, kappa: Curvature) -> Result<Self> {
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(GeometryError::InvalidPoint("non-finite coordinate".into()));
        }
        let k = kappa.value();
        if k < 0.0 && k * coords.norm_squared() <= -1.0 {
            return Err(GeometryError::InvalidPoint(format!(
                "norm {} outside the ball of radius {}",
                coords.norm(),
                kappa.radius()
            )));
        }
        Ok(Self { coords, kappa })
    }

    pub fn from_slice(coords: &[f64], kappa: f64) -> Result<Self> {
        Self::new(DVector::from_column_slice(coords), Curvature::new(kappa)?)
    }

    pub fn origin(dim: usize, kappa: Curvature) -> Self {
        Self { coords: DVector::zeros(dim), kappa }
    }

    pub fn coords(&self) -> &DVector<f64> {
        &self.coords
    }

    pub fn into_coords(self) -> DVector<f64> {
        self.coords
    }

    pub fn kappa(&self) -> Curvature {
        self.kappa
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn norm(&self) -> f64 {
        self.coords.norm()
    }

    /// Gyro-inverse `−x`.
    pub fn neg(&self) -> Self {
        Self { coords: -&self.coords, kappa: self.kappa }
    }

    /// Applies a linear map to the coordinates. Orthogonal maps keep the point valid.
    pub fn transform(&self, m: &nalgebra::DMatrix<f64>) -> Self {
        project_to_domain(m * &self.coords, self.kappa.value())
    }
}

/// A tangent vector at `base`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    coords: DVector<f64>,
    base: Point,
}

impl TangentVector {
    pub fn new(coords: DVector<f64>, base: Point) -> Result<Self> {
        if coords.len() != base.dim() {
            return Err(GeometryError::DimensionMismatch(coords.len(), base.dim()));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(GeometryError::InvalidPoint("non-finite tangent coordinate".into()));
        }
        Ok(Self { coords, base })
    }

    pub fn coords(&self) -> &DVector<f64> {
        &self.coords
    }

    pub fn base(&self) -> &Point {
        &self.base
    }

    /// Riemannian norm `λ_x‖v‖`.
    pub fn riemannian_norm(&self) -> f64 {
        conformal_factor(&self.base) * self.coords.norm()
    }
}

/// A point on the sphere (κ > 0) or upper hyperboloid sheet (κ < 0) in `R^{d+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct AmbientPoint {
    coords: DVector<f64>,
    kappa: Curvature,
}

impl AmbientPoint {
    /// Checks the sphere / hyperboloid constraint.
    ///
    /// The tolerance is 1e-9 scaled by the squared magnitude of the last
    /// coordinate, since the Minkowski form cancels two large squares.
    pub fn new(coords: DVector<f64>, kappa: Curvature) -> Result<Self> {
        let k = kappa.value();
        if k == 0.0 {
            return Err(GeometryError::Domain("no ambient model for kappa = 0".into()));
        }
        if coords.len() < 2 {
            return Err(GeometryError::DimensionMismatch(coords.len(), 2));
        }
        let d = coords.len() - 1;
        let last = coords[d];
        let scale = 1.0f64.max(last * last).max(1.0 / k.abs());
        if k > 0.0 {
            let r = coords.norm();
            if (r - 1.0 / k.sqrt()).abs() > 1e-9 * scale.sqrt() {
                return Err(GeometryError::InvalidPoint(format!(
                    "ambient norm {r} differs from sphere radius {}",
                    1.0 / k.sqrt()
                )));
            }
        } else {
            let form = minkowski(&coords, &coords);
            if (form - 1.0 / k).abs() > 1e-9 * scale || last <= 0.0 {
                return Err(GeometryError::InvalidPoint(format!(
                    "Minkowski form {form} differs from 1/kappa = {} or wrong sheet",
                    1.0 / k
                )));
            }
        }
        Ok(Self { coords, kappa })
    }

    pub fn coords(&self) -> &DVector<f64> {
        &self.coords
    }

    pub fn kappa(&self) -> Curvature {
        self.kappa
    }
}

/// `Σ_{i≤d} x_i y_i − x_{d+1} y_{d+1}`.
pub fn minkowski(x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    let d = x.len() - 1;
    x.rows(0, d).dot(&y.rows(0, d)) - x[d] * y[d]
}

fn check_pair(x: &Point, y: &Point) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(GeometryError::DimensionMismatch(x.dim(), y.dim()));
    }
    if x.kappa != y.kappa {
        return Err(GeometryError::CurvatureMismatch(x.kappa.value(), y.kappa.value()));
    }
    Ok(())
}

/// Radially clamps into the ball for κ < 0; leaves other curvatures untouched.
pub fn project_to_domain(raw: DVector<f64>, kappa: f64) -> Point {
    let kappa = Curvature(kappa);
    let mut coords = raw;
    if kappa.value() < 0.0 {
        let max_norm = (1.0 - BOUNDARY_EPS) / (-kappa.value()).sqrt();
        let n = coords.norm();
        if n > max_norm {
            coords *= max_norm / n;
        }
    }
    Point { coords, kappa }
}

/// `λ_x^κ = 2 / (1 + κ‖x‖²)`.
pub fn conformal_factor(x: &Point) -> f64 {
    2.0 / (1.0 + x.kappa.value() * x.coords.norm_squared())
}

/// κ-addition `x ⊕_κ y`.
pub fn kappa_add(x: &Point, y: &Point) -> Result<Point> {
    check_pair(x, y)?;
    let k = x.kappa.value();
    let xy = x.coords.dot(&y.coords);
    let x2 = x.coords.norm_squared();
    let y2 = y.coords.norm_squared();
    let denom = 1.0 - 2.0 * k * xy + k * k * x2 * y2;
    if denom.abs() < ANTIPODAL_EPS {
        return Err(GeometryError::Antipodal { denominator: denom });
    }
    let cross = if ADD_SIGN_FAULT.load(Ordering::Relaxed) { -2.0 * k * xy } else { 2.0 * k * xy };
    let a = 1.0 - cross - k * y2;
    let b = 1.0 + k * x2;
    Ok(project_to_domain((&x.coords * a + &y.coords * b) / denom, k))
}

static ADD_SIGN_FAULT: AtomicBool = AtomicBool::new(false);

/// Flips the sign of the `⟨x, y⟩` term of [`kappa_add`] process-wide. Exists
/// so the self-test harness can prove it catches a broken operation.
#[doc(hidden)]
pub fn set_add_sign_fault(on: bool) {
    ADD_SIGN_FAULT.store(on, Ordering::Relaxed);
}

/// κ-scaling `r ⊗_κ x`.
pub fn kappa_scale(r: f64, x: &Point) -> Result<Point> {
    let k = x.kappa.value();
    let n = x.norm();
    if n < MIN_NORM {
        return Ok(Point::origin(x.dim(), x.kappa));
    }
    let t = r * atan_k(n, k)?;
    let scaled = tan_k(t, k)?;
    Ok(project_to_domain(&x.coords * (scaled / n), k))
}

/// Exponential map at `x`.
pub fn exp_map(x: &Point, v: &TangentVector) -> Result<Point> {
    check_pair(x, v.base())?;
    let n = v.coords.norm();
    if n < MIN_NORM {
        return Ok(x.clone());
    }
    let k = x.kappa.value();
    let step = tan_k(conformal_factor(x) * n / 2.0, k)?;
    let second = Point { coords: &v.coords * (step / n), kappa: x.kappa };
    kappa_add(x, &second)
}

/// `exp_0(v) = tan_k(‖v‖)·v/‖v‖`.
pub fn exp0(v: &DVector<f64>, kappa: Curvature) -> Result<Point> {
    let n = v.norm();
    if n < MIN_NORM {
        return Ok(Point::origin(v.len(), kappa));
    }
    Ok(project_to_domain(v * (tan_k(n, kappa.value())? / n), kappa.value()))
}

/// `log_0(x) = atan_k(‖x‖)·x/‖x‖`.
pub fn log0(x: &Point) -> Result<DVector<f64>> {
    let n = x.norm();
    if n < MIN_NORM {
        return Ok(DVector::zeros(x.dim()));
    }
    Ok(&x.coords * (atan_k_in_domain(n, x.kappa.value())? / n))
}

/// `‖−x ⊕_κ y‖` through `‖x − y‖² / (1 + 2κ⟨x,y⟩ + κ²‖x‖²‖y‖²)`, exactly zero at `x = y`.
pub fn gyro_norm_diff(x: &Point, y: &Point) -> Result<f64> {
    check_pair(x, y)?;
    let k = x.kappa.value();
    let den = 1.0 + 2.0 * k * x.coords.dot(&y.coords) + k * k * x.coords.norm_squared() * y.coords.norm_squared();
    if den.abs() < ANTIPODAL_EPS {
        return Err(GeometryError::Antipodal { denominator: den });
    }
    Ok((&x.coords - &y.coords).norm() / den.sqrt())
}

fn atan_k_in_domain(u: f64, k: f64) -> Result<f64> {
    if k < 0.0 {
        let max = (1.0 - BOUNDARY_EPS) / (-k).sqrt();
        return atan_k(u.min(max), k);
    }
    atan_k(u, k)
}

/// Logarithmic map at `x`.
pub fn log_map(x: &Point, y: &Point) -> Result<TangentVector> {
    let n = gyro_norm_diff(x, y)?;
    if n < MIN_NORM {
        return Ok(TangentVector { coords: DVector::zeros(x.dim()), base: x.clone() });
    }
    let w = kappa_add(&x.neg(), y)?;
    let wn = w.norm().max(MIN_NORM);
    let k = x.kappa.value();
    let coords = w.coords * (2.0 / conformal_factor(x) * atan_k_in_domain(n, k)? / wn);
    Ok(TangentVector { coords, base: x.clone() })
}

/// Geodesic distance `2·atan_k(‖−x ⊕_κ y‖)`.
pub fn distance(x: &Point, y: &Point) -> Result<f64> {
    let n = gyro_norm_diff(x, y)?;
    Ok(2.0 * atan_k_in_domain(n, x.kappa.value())?)
}

/// Point at parameter `t` on the unit-speed geodesic from `x` towards `y`.
pub fn geodesic(x: &Point, y: &Point, t: f64) -> Result<Point> {
    let w = kappa_add(&x.neg(), y)?;
    kappa_add(x, &kappa_scale(t, &w)?)
}

/// Gyration `gyr[u, v]w` in closed form `w + 2(A·u + B·v)/D`.
pub fn gyration(u: &Point, v: &Point, w: &Point) -> Result<Point> {
    check_pair(u, v)?;
    check_pair(u, w)?;
    let k = u.kappa.value();
    let uw = u.coords.dot(&w.coords);
    let vw = v.coords.dot(&w.coords);
    let uv = u.coords.dot(&v.coords);
    let u2 = u.coords.norm_squared();
    let v2 = v.coords.norm_squared();
    let a = -k * k * uw * v2 - k * vw + 2.0 * k * k * uv * vw;
    let b = -k * k * vw * u2 + k * uw;
    let d = 1.0 - 2.0 * k * uv + k * k * u2 * v2;
    if d.abs() < ANTIPODAL_EPS {
        return Err(GeometryError::Antipodal { denominator: d });
    }
    let coords = &w.coords + (&u.coords * a + &v.coords * b) * (2.0 / d);
    Ok(Point { coords, kappa: u.kappa })
}

/// Gyration from its definition `−(u ⊕ v) ⊕ (u ⊕ (v ⊕ w))`.
pub fn gyration_by_definition(u: &Point, v: &Point, w: &Point) -> Result<Point> {
    let uv = kappa_add(u, v)?;
    let inner = kappa_add(u, &kappa_add(v, w)?)?;
    kappa_add(&uv.neg(), &inner)
}

/// Inverse stereographic projection onto the sphere or hyperboloid in `R^{d+1}`.
pub fn stereo_lift(x: &Point) -> Result<AmbientPoint> {
    let k = x.kappa.value();
    if k == 0.0 {
        return Err(GeometryError::Domain("stereo_lift needs kappa != 0".into()));
    }
    let lambda = conformal_factor(x);
    let d = x.dim();
    let mut coords = DVector::zeros(d + 1);
    coords.rows_mut(0, d).copy_from(&(&x.coords * lambda));
    coords[d] = (lambda - 1.0) / k.abs().sqrt();
    Ok(AmbientPoint { coords, kappa: x.kappa })
}

/// Stereographic projection from the ambient model back to `st^d_κ`.
pub fn stereo_project(p: &AmbientPoint) -> Result<Point> {
    let k = p.kappa.value();
    let d = p.coords.len() - 1;
    let denom = 1.0 + k.abs().sqrt() * p.coords[d];
    if denom.abs() < 1e-12 {
        return Err(GeometryError::Domain("stereo_project at the projection pole".into()));
    }
    let coords = p.coords.rows(0, d) / denom;
    Point::new(coords, p.kappa)
}

/// Geodesic distance computed in the ambient model: great-circle for κ > 0,
/// `arccosh` of the Minkowski form for κ < 0.
pub fn ambient_distance(p: &AmbientPoint, q: &AmbientPoint) -> Result<f64> {
    if p.kappa != q.kappa {
        return Err(GeometryError::CurvatureMismatch(p.kappa.value(), q.kappa.value()));
    }
    let k = p.kappa.value();
    if k > 0.0 {
        let c = (k * p.coords.dot(&q.coords)).clamp(-1.0, 1.0);
        Ok(c.acos() / k.sqrt())
    } else {
        let c = (k * minkowski(&p.coords, &q.coords)).max(1.0);
        Ok(c.acosh() / (-k).sqrt())
    }
}
