//! Products of constant-curvature spaces.

use nalgebra::DMatrix;

use crate::agg::PointMatrix;
use crate::manifold::{distance, Curvature, GeometryError, Point, Result};

/// Splits `n` into `k` near-equal parts, larger parts first.
pub fn split_even(n: usize, k: usize) -> Vec<usize> {
    (0..k).map(|i| n / k + usize::from(i < n % k)).collect()
}

/// Column blocks of `x`, one per `(dim, κ)` component.
pub fn product_split(x: &DMatrix<f64>, components: &[(usize, f64)]) -> Result<Vec<PointMatrix>> {
    let total: usize = components.iter().map(|c| c.0).sum();
    if total != x.ncols() {
        return Err(GeometryError::DimensionMismatch(total, x.ncols()));
    }
    let mut start = 0;
    components
        .iter()
        .map(|&(d, k)| {
            let block = x.columns(start, d).into_owned();
            start += d;
            PointMatrix::new(block, Curvature::new(k)?)
        })
        .collect()
}

/// `sqrt(Σ d_κᵢ(xᵢ, yᵢ)²)`.
pub fn product_distance(xs: &[Point], ys: &[Point]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(GeometryError::DimensionMismatch(xs.len(), ys.len()));
    }
    let mut sum = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let d = distance(x, y)?;
        sum += d * d;
    }
    Ok(sum.sqrt())
}
