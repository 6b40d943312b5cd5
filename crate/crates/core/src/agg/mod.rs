//! Weighted combinations of points: gyromidpoints, κ-left and κ-right matrix
//! multiplication and tangential aggregation.

pub mod diff;

use nalgebra::{DMatrix, DVector};

use crate::manifold::{
    conformal_factor, exp0, exp_map, kappa_scale, log0, log_map, project_to_domain, Curvature, GeometryError, Point,
    Result, TangentVector,
};

/// Threshold on `|Σ α_j (λ_j − 1)|` below which a midpoint is degenerate.
pub const COND_EPS: f64 = 1e-12;

/// `n` points of one manifold stored as the rows of an `n × d` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMatrix {
    coords: DMatrix<f64>,
    kappa: Curvature,
}

impl PointMatrix {
    pub fn new(coords: DMatrix<f64>, kappa: Curvature) -> Result<Self> {
        for i in 0..coords.nrows() {
            Point::new(coords.row(i).transpose(), kappa)?;
        }
        Ok(Self { coords, kappa })
    }

    pub fn from_points(points: &[Point]) -> Result<Self> {
        let first = points.first().ok_or_else(|| GeometryError::InvalidPoint("empty point list".into()))?;
        let (d, kappa) = (first.dim(), first.kappa());
        let mut coords = DMatrix::zeros(points.len(), d);
        for (i, p) in points.iter().enumerate() {
            if p.dim() != d {
                return Err(GeometryError::DimensionMismatch(p.dim(), d));
            }
            if p.kappa() != kappa {
                return Err(GeometryError::CurvatureMismatch(p.kappa().value(), kappa.value()));
            }
            coords.row_mut(i).copy_from(&p.coords().transpose());
        }
        Ok(Self { coords, kappa })
    }

    pub fn coords(&self) -> &DMatrix<f64> {
        &self.coords
    }

    pub fn kappa(&self) -> Curvature {
        self.kappa
    }

    pub fn nrows(&self) -> usize {
        self.coords.nrows()
    }

    pub fn dim(&self) -> usize {
        self.coords.ncols()
    }

    pub fn row(&self, i: usize) -> Point {
        project_to_domain(self.coords.row(i).transpose(), self.kappa.value())
    }

    pub fn rows(&self) -> Vec<Point> {
        (0..self.nrows()).map(|i| self.row(i)).collect()
    }

    /// Applies `f` to every row.
    pub fn map_rows(&self, f: impl Fn(&Point) -> Result<Point>) -> Result<Self> {
        let points = self.rows().iter().map(f).collect::<Result<Vec<_>>>()?;
        if points.is_empty() {
            return Ok(self.clone());
        }
        Self::from_points(&points)
    }
}

/// Aggregation weights `α`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightRow(Vec<f64>);

impl WeightRow {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(GeometryError::Domain("non-finite weight".into()));
        }
        Ok(Self(weights))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn midpoint_cached(x: &PointMatrix, lambdas: &[f64], alpha: &[f64], row: Option<usize>) -> Result<Point> {
    if alpha.len() != x.nrows() {
        return Err(GeometryError::DimensionMismatch(alpha.len(), x.nrows()));
    }
    let k = x.kappa.value();
    let mut num = DVector::zeros(x.dim());
    let mut den = 0.0;
    for (j, (&a, &lam)) in alpha.iter().zip(lambdas).enumerate() {
        if a == 0.0 {
            continue;
        }
        num += x.coords.row(j).transpose() * (a * lam);
        den += a * (lam - 1.0);
    }
    if den.abs() < COND_EPS {
        return Err(if k == 0.0 {
            GeometryError::ZeroWeight { row }
        } else {
            GeometryError::DegenerateMidpoint { row, value: den }
        });
    }
    kappa_scale(0.5, &project_to_domain(num / den, k))
}

fn lambdas(x: &PointMatrix) -> Vec<f64> {
    x.rows().iter().map(conformal_factor).collect()
}

/// Weighted gyromidpoint `½ ⊗ (Σ α_i λ_i x_i / Σ α_j (λ_j − 1))`.
pub fn gyromidpoint(x: &PointMatrix, alpha: &WeightRow) -> Result<Point> {
    midpoint_cached(x, &lambdas(x), alpha.as_slice(), None)
}

/// `exp_0(log_0(X)·W)` row by row.
pub fn right_matmul(x: &PointMatrix, w: &DMatrix<f64>) -> Result<PointMatrix> {
    if w.nrows() != x.dim() {
        return Err(GeometryError::DimensionMismatch(w.nrows(), x.dim()));
    }
    let mut out = DMatrix::zeros(x.nrows(), w.ncols());
    for (i, p) in x.rows().iter().enumerate() {
        let v = w.transpose() * log0(p)?;
        out.row_mut(i).copy_from(&exp0(&v, x.kappa)?.coords().transpose());
    }
    Ok(PointMatrix { coords: out, kappa: x.kappa })
}

/// Rows of `A` whose entries are all zero.
pub fn empty_rows(a: &DMatrix<f64>) -> Vec<usize> {
    (0..a.nrows()).filter(|&i| a.row(i).iter().all(|&v| v == 0.0)).collect()
}

/// Row `i` is `(Σ_j A_ij) ⊗ gyromidpoint(X; A_i•)`. An all-zero row yields the
/// origin; see [`empty_rows`].
pub fn left_matmul(a: &DMatrix<f64>, x: &PointMatrix) -> Result<PointMatrix> {
    if a.ncols() != x.nrows() {
        return Err(GeometryError::DimensionMismatch(a.ncols(), x.nrows()));
    }
    let lam = lambdas(x);
    let sums: Vec<f64> = (0..a.nrows()).map(|i| a.row(i).sum()).collect();
    let mut out = DMatrix::zeros(a.nrows(), x.dim());
    for i in 0..a.nrows() {
        let row: Vec<f64> = a.row(i).iter().copied().collect();
        if row.iter().all(|&v| v == 0.0) {
            continue;
        }
        let m = midpoint_cached(x, &lam, &row, Some(i))?;
        out.row_mut(i).copy_from(&kappa_scale(sums[i], &m)?.coords().transpose());
    }
    Ok(PointMatrix { coords: out, kappa: x.kappa })
}

/// `exp_x(Σ α_i log_x(x_i))`.
pub fn tangential_agg(x: &Point, points: &PointMatrix, alpha: &WeightRow) -> Result<Point> {
    if alpha.len() != points.nrows() {
        return Err(GeometryError::DimensionMismatch(alpha.len(), points.nrows()));
    }
    let mut v = DVector::zeros(x.dim());
    for (p, &a) in points.rows().iter().zip(alpha.as_slice()) {
        v += log_map(x, p)?.coords() * a;
    }
    exp_map(x, &TangentVector::new(v, x.clone())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{distance, random_isometry, sample_point, tan_k, atan_k};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pm(rows: &[&[f64]], k: f64) -> PointMatrix {
        let pts: Vec<Point> = rows.iter().map(|r| Point::from_slice(r, k).unwrap()).collect();
        PointMatrix::from_points(&pts).unwrap()
    }

    fn random_pm(rng: &mut ChaCha8Rng, n: usize, d: usize, k: f64) -> PointMatrix {
        let pts: Vec<Point> = (0..n).map(|_| sample_point(rng, d, k, 1.0).unwrap()).collect();
        PointMatrix::from_points(&pts).unwrap()
    }

    fn w(v: &[f64]) -> WeightRow {
        WeightRow::new(v.to_vec()).unwrap()
    }

    /// Weighted Fréchet mean by Riemannian gradient descent on Σ α_i d(m, x_i)².
    fn frechet_mean(x: &PointMatrix, alpha: &[f64]) -> Point {
        let mut m = x.row(0);
        for _ in 0..2000 {
            let mut g = DVector::zeros(x.dim());
            for (p, &a) in x.rows().iter().zip(alpha) {
                g += log_map(&m, p).unwrap().coords() * a;
            }
            // the Riemannian gradient is −2 Σ α_i log_m(x_i)
            let step = g * (2.0 * 0.05);
            m = exp_map(&m, &TangentVector::new(step, m.clone()).unwrap()).unwrap();
        }
        m
    }

    #[test]
    fn gyromidpoint_examples() {
        let x = pm(&[&[0.2, -0.3]], -1.0);
        let m = gyromidpoint(&x, &w(&[1.0])).unwrap();
        assert_abs_diff_eq!((m.coords() - x.row(0).coords()).amax(), 0.0, epsilon = 1e-15);

        let e = pm(&[&[1.0, 0.0], &[0.0, 1.0]], 0.0);
        let m = gyromidpoint(&e, &w(&[1.0, 3.0])).unwrap();
        assert_abs_diff_eq!(m.coords()[0], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(m.coords()[1], 0.75, epsilon = 1e-15);
        assert!(matches!(gyromidpoint(&e, &w(&[1.0, -1.0])), Err(GeometryError::ZeroWeight { row: None })));
    }

    #[test]
    fn hyperbolic_midpoint_is_the_frechet_mean() {
        let h = pm(&[&[0.3, 0.2], &[-0.5, 0.1]], -1.0);
        let m = gyromidpoint(&h, &w(&[1.0, 1.0])).unwrap();
        let (dx, dy) = (distance(&h.row(0), &m).unwrap(), distance(&h.row(1), &m).unwrap());
        assert!((dx - dy).abs() < 1e-9);
        let f = frechet_mean(&h, &[1.0, 1.0]);
        assert!((m.coords() - f.coords()).amax() < 1e-6, "{m:?} vs {f:?}");
    }

    #[test]
    fn spherical_condition_violation() {
        // κ‖x‖‖y‖ = 1 with x, y collinear gives (λ_x − 1) + (λ_y − 1) = 0
        let s = pm(&[&[0.5, 0.0], &[2.0, 0.0]], 1.0);
        assert!(matches!(
            gyromidpoint(&s, &w(&[1.0, 1.0])),
            Err(GeometryError::DegenerateMidpoint { .. })
        ));
    }

    #[test]
    fn weight_scale_invariance_and_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_pm(&mut rng, 4, 3, -0.8);
        let a = [0.3, 1.2, 0.5, 0.9];
        let m1 = gyromidpoint(&x, &w(&a)).unwrap();
        let m2 = gyromidpoint(&x, &w(&a.map(|v| v * 4.0))).unwrap();
        assert_eq!(m1, m2);
        let p = x.row(0);
        let sym = PointMatrix::from_points(&[p.clone(), p.neg()]).unwrap();
        assert!(gyromidpoint(&sym, &w(&[1.0, 1.0])).unwrap().norm() < 1e-12);
    }

    #[test]
    fn right_matmul_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_pm(&mut rng, 5, 3, -1.0);
        let id = right_matmul(&x, &DMatrix::identity(3, 3)).unwrap();
        assert!((id.coords() - x.coords()).amax() < 1e-14);

        let wm = DMatrix::from_fn(3, 2, |i, j| (i as f64 - j as f64) * 0.4 + 0.1);
        let e = random_pm(&mut rng, 5, 3, 0.0);
        let r = right_matmul(&e, &wm).unwrap();
        assert!((r.coords() - e.coords() * &wm).amax() < 1e-15);

        // tan_k(‖Xw‖/‖x‖ · atan_k(‖x‖)) · Xw/‖Xw‖
        let r = right_matmul(&x, &wm).unwrap();
        for i in 0..5 {
            let xi = x.coords().row(i).transpose();
            let xw = wm.transpose() * &xi;
            let s = tan_k(xw.norm() / xi.norm() * atan_k(xi.norm(), -1.0).unwrap(), -1.0).unwrap();
            let expect = &xw * (s / xw.norm());
            assert!((r.coords().row(i).transpose() - expect).amax() < 1e-10);
        }
    }

    #[test]
    fn left_matmul_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_pm(&mut rng, 4, 2, -1.0);
        let id = left_matmul(&DMatrix::identity(4, 4), &x).unwrap();
        assert!((id.coords() - x.coords()).amax() < 1e-14);

        let e = pm(&[&[1.0, 0.0], &[0.0, 1.0]], 0.0);
        let half = DMatrix::from_element(2, 2, 0.5);
        let r = left_matmul(&half, &e).unwrap();
        assert!((r.coords() - DMatrix::from_element(2, 2, 0.5)).amax() < 1e-15);

        let a = DMatrix::from_fn(4, 4, |i, j| 0.1 + ((i * 3 + j) % 5) as f64 * 0.2);
        let lhs = left_matmul(&a, &x).unwrap().map_rows(|p| kappa_scale(0.7, p)).unwrap();
        let rhs = left_matmul(&(a * 0.7), &x).unwrap();
        assert!((lhs.coords() - rhs.coords()).amax() < 1e-10);
    }

    #[test]
    fn zero_rows_give_origin() {
        let x = pm(&[&[0.2, 0.1], &[-0.1, 0.4]], -1.0);
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.5, 0.5]);
        assert_eq!(empty_rows(&a), vec![0]);
        let r = left_matmul(&a, &x).unwrap();
        assert_eq!(r.row(0).norm(), 0.0);
        assert!(r.row(1).norm() > 0.0);
    }

    #[test]
    fn degenerate_rows_report_their_index() {
        let s = pm(&[&[0.5, 0.0], &[2.0, 0.0]], 1.0);
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]);
        assert!(matches!(left_matmul(&a, &s), Err(GeometryError::DegenerateMidpoint { row: Some(1), .. })));
    }

    #[test]
    fn tangential_agg_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_pm(&mut rng, 3, 2, 0.5);
        let base = x.row(0);
        let single = PointMatrix::from_points(&[x.row(1)]).unwrap();
        let t = tangential_agg(&base, &single, &w(&[1.0])).unwrap();
        assert!((t.coords() - x.row(1).coords()).amax() < 1e-12);

        let e = random_pm(&mut rng, 3, 2, 0.0);
        let o = Point::origin(2, e.kappa());
        let t = tangential_agg(&o, &e, &w(&[0.2, 0.5, 0.3])).unwrap();
        let expect = e.coords().transpose() * DVector::from_vec(vec![0.2, 0.5, 0.3]);
        assert!((t.coords() - expect).amax() < 1e-15);
    }

    #[test]
    fn tangential_agg_is_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &k in &[-1.0, 0.5] {
            let phi = random_isometry(&mut rng, 3, k).unwrap();
            let x = random_pm(&mut rng, 4, 3, k);
            let base = sample_point(&mut rng, 3, k, 1.0).unwrap();
            let alpha = w(&(0..4).map(|_| rng.gen_range(0.0..1.0)).collect::<Vec<_>>());
            let lhs = tangential_agg(&phi.apply(&base).unwrap(), &x.map_rows(|p| phi.apply(p)).unwrap(), &alpha)
                .unwrap();
            let rhs = phi.apply(&tangential_agg(&base, &x, &alpha).unwrap()).unwrap();
            assert!((lhs.coords() - rhs.coords()).amax() < 1e-8);
        }
    }
}
