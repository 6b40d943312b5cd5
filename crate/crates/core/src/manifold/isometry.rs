use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{kappa_add, tan_k, Curvature, GeometryError, Point};

/// `φ(x) = z ⊕_κ R x` with orthogonal `R`.
#[derive(Debug, Clone, PartialEq)]
pub struct Isometry {
    rotation: DMatrix<f64>,
    translation: Point,
}

impl Isometry {
    pub fn new(rotation: DMatrix<f64>, translation: Point) -> Result<Self, GeometryError> {
        let d = translation.dim();
        if rotation.nrows() != d || rotation.ncols() != d {
            return Err(GeometryError::DimensionMismatch(rotation.nrows(), d));
        }
        let defect = (rotation.transpose() * &rotation - DMatrix::identity(d, d)).amax();
        if defect > 1e-12 {
            return Err(GeometryError::InvalidPoint(format!(
                "rotation is not orthogonal (defect {defect:e})"
            )));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity(d: usize, kappa: Curvature) -> Self {
        Self { rotation: DMatrix::identity(d, d), translation: Point::origin(d, kappa) }
    }

    pub fn rotation(&self) -> &DMatrix<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Point {
        &self.translation
    }

    pub fn apply(&self, x: &Point) -> Result<Point, GeometryError> {
        kappa_add(&self.translation, &x.transform(&self.rotation))
    }
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the signs of
/// `diag(R)` folded into `Q`.
fn random_orthogonal<R: Rng + ?Sized>(rng: &mut R, d: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Point at geodesic distance at most `max_radius` from the origin, uniform in
/// the Euclidean sense over the direction and `ρ = max_radius·U^{1/d}`.
pub fn sample_point<R: Rng + ?Sized>(
    rng: &mut R,
    d: usize,
    kappa: f64,
    max_radius: f64,
) -> Result<Point, GeometryError> {
    let kappa = Curvature::new(kappa)?;
    let mut dir = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
    let n = dir.norm();
    if n == 0.0 {
        return Ok(Point::origin(d, kappa));
    }
    dir /= n;
    let u: f64 = rng.gen();
    let rho = max_radius * u.powf(1.0 / d as f64);
    // d(0, x) = 2·atan_k(‖x‖)
    let r = tan_k(rho / 2.0, kappa.value())?;
    Point::new(dir * r, kappa)
}

pub fn random_isometry<R: Rng + ?Sized>(
    rng: &mut R,
    d: usize,
    kappa: f64,
) -> Result<Isometry, GeometryError> {
    let rotation = random_orthogonal(rng, d);
    let translation = sample_point(rng, d, kappa, 0.5)?;
    Ok(Isometry { rotation, translation })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::distance;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_isometry_is_identity() {
        let k = Curvature::new(-1.0).unwrap();
        let x = Point::from_slice(&[0.2, -0.3, 0.1], -1.0).unwrap();
        assert_eq!(Isometry::identity(3, k).apply(&x).unwrap(), x);
    }

    #[test]
    fn rotation_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for d in 1..6 {
            let phi = random_isometry(&mut rng, d, 0.5).unwrap();
            let r = phi.rotation();
            assert!((r.transpose() * r - DMatrix::identity(d, d)).amax() < 1e-12);
        }
    }

    #[test]
    fn preserves_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &k in &[-1.0, 0.5] {
            let phi = random_isometry(&mut rng, 3, k).unwrap();
            let mut worst: f64 = 0.0;
            for _ in 0..100 {
                let x = sample_point(&mut rng, 3, k, 1.0).unwrap();
                let y = sample_point(&mut rng, 3, k, 1.0).unwrap();
                let before = distance(&x, &y).unwrap();
                let after = distance(&phi.apply(&x).unwrap(), &phi.apply(&y).unwrap()).unwrap();
                worst = worst.max((before - after).abs());
                let twice =
                    distance(&phi.apply(&phi.apply(&x).unwrap()).unwrap(), &phi.apply(&phi.apply(&y).unwrap()).unwrap())
                        .unwrap();
                worst = worst.max((before - twice).abs());
            }
            assert!(worst < 1e-9, "kappa {k}: deviation {worst:e}");
        }
    }

    #[test]
    fn sample_point_respects_radius() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let o = Point::origin(4, Curvature::new(-2.0).unwrap());
        for _ in 0..50 {
            let x = sample_point(&mut rng, 4, -2.0, 0.5).unwrap();
            assert!(distance(&o, &x).unwrap() <= 0.5 + 1e-12);
        }
    }
}
