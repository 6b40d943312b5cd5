//! Curvature-fused trigonometry.
//!
//! `tan_k(u, κ)` is `tan(√κ·u)/√κ` for κ > 0 and `tanh(√−κ·u)/√−κ` for κ < 0;
//! `atan_k` and `asin_k` are the matching inverses (`asin_k` uses `asinh` on the
//! hyperbolic side). All three are analytic in κ through 0. When `|κ|·u²` drops
//! below [`TAYLOR_EPS`] the value comes from a truncated power series, so κ = 0
//! is handled without a 0/0.
//!
//! The `*_partials` functions return `(∂f/∂u, ∂f/∂κ)` at a point. They feed the
//! reverse-mode engine; the κ-derivative switches to a longer series whenever
//! the closed form would cancel catastrophically.

use std::f64::consts::FRAC_PI_2;

use super::GeometryError;

/// Below this value of `|κ|·u²` the series branch is used for function values.
pub const TAYLOR_EPS: f64 = 1e-10;

/// Margin kept from `π/2` for `tan_k` with positive curvature.
pub const TAN_MARGIN: f64 = 1e-9;

/// Largest admissible `|√κ·w|` inside `asin_k` for κ > 0.
pub const ASIN_CLAMP: f64 = 1.0 - 1e-7;

// The κ-derivative uses the series up to this value of |κ|·u².
const SERIES_DERIV_EPS: f64 = 1e-3;

// tan z = z + z³/3 + 2z⁵/15 + 17z⁷/315 + 62z⁹/2835
const TAN_COEF: [f64; 5] = [1.0, 1.0 / 3.0, 2.0 / 15.0, 17.0 / 315.0, 62.0 / 2835.0];
// asin z = z + z³/6 + 3z⁵/40 + 5z⁷/112 + 35z⁹/1152
const ASIN_COEF: [f64; 5] = [1.0, 1.0 / 6.0, 3.0 / 40.0, 5.0 / 112.0, 35.0 / 1152.0];
// arctan z = z − z³/3 + z⁵/5 − z⁷/7 + z⁹/9
const ATAN_COEF: [f64; 5] = [1.0, -1.0 / 3.0, 1.0 / 5.0, -1.0 / 7.0, 1.0 / 9.0];

/// `u · Σ c_n (κu²)^n` over the first `terms` coefficients.
fn series(coef: &[f64], terms: usize, u: f64, kappa: f64) -> f64 {
    let x = kappa * u * u;
    let mut acc = 0.0;
    for c in coef[..terms].iter().rev() {
        acc = acc * x + c;
    }
    u * acc
}

/// `∂/∂κ [u · Σ c_n (κu²)^n] = Σ n c_n κ^{n−1} u^{2n+1}`.
fn series_dkappa(coef: &[f64], u: f64, kappa: f64) -> f64 {
    let u2 = u * u;
    let x = kappa * u2;
    let mut acc = 0.0;
    for (n, c) in coef.iter().enumerate().skip(1).rev() {
        acc = acc * x + n as f64 * c;
    }
    acc * u * u2
}

pub fn tan_k(u: f64, kappa: f64) -> Result<f64, GeometryError> {
    if u < 0.0 {
        return tan_k(-u, kappa).map(|v| -v);
    }
    if kappa.abs() * u * u < TAYLOR_EPS {
        return Ok(series(&TAN_COEF, 3, u, kappa));
    }
    if kappa > 0.0 {
        let s = kappa.sqrt();
        let z = s * u;
        if z.abs() >= FRAC_PI_2 - TAN_MARGIN {
            return Err(GeometryError::Domain(format!(
                "tan_k: |sqrt(kappa)*u| = {} reaches pi/2",
                z.abs()
            )));
        }
        Ok(z.tan() / s)
    } else {
        let s = (-kappa).sqrt();
        Ok((s * u).tanh() / s)
    }
}

/// Partials of [`tan_k`] given its value `f` at `(u, κ)`.
pub fn tan_k_partials(u: f64, kappa: f64, f: f64) -> (f64, f64) {
    let du = 1.0 + kappa * f * f;
    let dk = if kappa.abs() * u * u < SERIES_DERIV_EPS {
        series_dkappa(&TAN_COEF, u, kappa)
    } else {
        (u * du - f) / (2.0 * kappa)
    };
    (du, dk)
}

pub fn atan_k(u: f64, kappa: f64) -> Result<f64, GeometryError> {
    if u < 0.0 {
        return atan_k(-u, kappa).map(|v| -v);
    }
    if kappa.abs() * u * u < TAYLOR_EPS {
        return Ok(series(&ATAN_COEF, 3, u, kappa));
    }
    if kappa > 0.0 {
        let s = kappa.sqrt();
        Ok((s * u).atan() / s)
    } else {
        let s = (-kappa).sqrt();
        let z = s * u;
        if z.abs() >= 1.0 {
            return Err(GeometryError::Domain(format!(
                "atan_k: |sqrt(-kappa)*u| = {} is outside the ball",
                z.abs()
            )));
        }
        Ok(z.atanh() / s)
    }
}

/// Partials of [`atan_k`] given its value `g` at `(u, κ)`.
pub fn atan_k_partials(u: f64, kappa: f64, g: f64) -> (f64, f64) {
    let du = 1.0 / (1.0 + kappa * u * u);
    let dk = if kappa.abs() * u * u < SERIES_DERIV_EPS {
        series_dkappa(&ATAN_COEF, u, kappa)
    } else {
        (u * du - g) / (2.0 * kappa)
    };
    (du, dk)
}

/// Inverse sine with curvature: `asin(√κ·w)/√κ` (κ > 0), `asinh(√−κ·w)/√−κ` (κ < 0).
///
/// For κ > 0 the argument `√κ·w` is clamped to `±ASIN_CLAMP`.
pub fn asin_k(w: f64, kappa: f64) -> f64 {
    if w < 0.0 {
        return -asin_k(-w, kappa);
    }
    if kappa.abs() * w * w < TAYLOR_EPS {
        return series(&ASIN_COEF, 3, w, kappa);
    }
    if kappa > 0.0 {
        let s = kappa.sqrt();
        (s * w).clamp(-ASIN_CLAMP, ASIN_CLAMP).asin() / s
    } else {
        let s = (-kappa).sqrt();
        (s * w).asinh() / s
    }
}

/// Partials of [`asin_k`] given its value `f` at `(w, κ)`.
pub fn asin_k_partials(w: f64, kappa: f64, f: f64) -> (f64, f64) {
    if kappa > 0.0 && kappa.abs() * w * w >= TAYLOR_EPS && (kappa.sqrt() * w).abs() > ASIN_CLAMP {
        // clamped: f = asin(±c)/√κ
        return (0.0, -f / (2.0 * kappa));
    }
    let dw = 1.0 / (1.0 - kappa * w * w).sqrt();
    let dk = if kappa.abs() * w * w < SERIES_DERIV_EPS {
        series_dkappa(&ASIN_COEF, w, kappa)
    } else {
        (w * dw - f) / (2.0 * kappa)
    };
    (dw, dk)
}
