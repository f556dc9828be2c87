//! Gaussian densities and the scalar special functions built on them.

use std::f64::consts::PI;

use statrs::function::gamma;

use crate::error::{Error, Result};

/// `1/√(2π)`.
pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard Gaussian density `(2π)^{−k/2} e^{−‖x‖²/2}` in `k` dimensions.
pub fn gaussian_density(x: &[f64], k: usize) -> Result<f64> {
    if k == 0 || x.len() != k {
        return Err(Error::Contract(format!(
            "point of length {} evaluated in dimension {k}",
            x.len()
        )));
    }
    let sq: f64 = x.iter().map(|v| v * v).sum();
    Ok((2.0 * PI).powf(-(k as f64) / 2.0) * (-0.5 * sq).exp())
}

/// One-dimensional standard normal density.
#[inline]
pub fn normal_pdf(t: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * t * t).exp()
}

/// Standard normal CDF, accurate in both tails.
pub fn normal_cdf(t: f64) -> f64 {
    0.5 * libm::erfc(-t / std::f64::consts::SQRT_2)
}

/// Upper tail `1 − Φ(t)` without cancellation.
pub fn normal_sf(t: f64) -> f64 {
    0.5 * libm::erfc(t / std::f64::consts::SQRT_2)
}

/// Surface measure of the unit `k`-sphere in `R^{k+1}`: `2π^{(k+1)/2}/Γ((k+1)/2)`.
pub fn unit_sphere_area(k: usize) -> f64 {
    let h = (k as f64 + 1.0) / 2.0;
    2.0 * (h * PI.ln() - gamma::ln_gamma(h)).exp()
}

/// `P(χ²_dof ≤ x)` through the regularized lower incomplete gamma function.
pub fn chi_square_cdf(dof: usize, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    gamma::gamma_lr(dof as f64 / 2.0, x / 2.0)
}

/// `P(χ²_dof > x)`.
pub fn chi_square_sf(dof: usize, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    gamma::gamma_ur(dof as f64 / 2.0, x / 2.0)
}

/// Quadrant probability `P(X > 0, Y > 0) = 1/4 + arcsin(ρ)/(2π)` for a
/// standard bivariate normal with correlation `ρ`.
pub fn orthant_probability(rho: f64) -> f64 {
    0.25 + rho.asin() / (2.0 * PI)
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
