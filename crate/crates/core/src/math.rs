//! Float helpers that `core` does not provide without `std`.

pub use libm::{erf, exp, log, log2, sqrt};

pub const SQRT_2: f64 = core::f64::consts::SQRT_2;
pub const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[inline]
pub fn powi(x: f64, n: i32) -> f64 {
    libm::pow(x, n as f64)
}

#[inline]
pub fn ceil(x: f64) -> f64 {
    libm::ceil(x)
}

/// Standard normal CDF.
#[inline]
pub fn phi_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / SQRT_2))
}

/// Standard normal density.
#[inline]
pub fn phi_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * exp(-0.5 * x * x)
}
