//! Scalar special functions shared by the graph ops and the entropy model.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Lower clamp applied to every likelihood so `-log p` stays bounded.
pub const LIKELIHOOD_FLOOR: f64 = 1e-9;

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Upper tail `P(X > t)` for a standard normal.
pub fn std_normal_sf(t: f64) -> f64 {
    0.5 * libm::erfc(t * FRAC_1_SQRT_2)
}

pub fn std_normal_cdf(t: f64) -> f64 {
    0.5 * libm::erfc(-t * FRAC_1_SQRT_2)
}

/// `Phi((x + 1/2 - mu)/sigma) - Phi((x - 1/2 - mu)/sigma)` without the floor.
///
/// Evaluated on whichever tail keeps both terms small, so masses far from the
/// mean keep their relative precision instead of cancelling to zero.
pub fn gaussian_bin_mass_raw(x: f64, mu: f64, sigma: f64) -> f64 {
    let upper = (x + 0.5 - mu) / sigma;
    let lower = (x - 0.5 - mu) / sigma;
    if lower > 0.0 {
        std_normal_sf(lower) - std_normal_sf(upper)
    } else if upper < 0.0 {
        std_normal_cdf(upper) - std_normal_cdf(lower)
    } else {
        1.0 - std_normal_sf(upper) - std_normal_cdf(lower)
    }
}
