//! Thin wrappers over `libm` so the whole crate shares one float-math path
//! that also works without `std`.

#[inline]
pub fn powf(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

#[inline]
pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}

#[inline]
pub fn acos(x: f64) -> f64 {
    libm::acos(x)
}

#[inline]
pub fn erf(x: f64) -> f64 {
    libm::erf(x)
}

#[inline]
pub fn max3(a: f64, b: f64, c: f64) -> f64 {
    a.max(b).max(c)
}

#[inline]
pub fn min3(a: f64, b: f64, c: f64) -> f64 {
    a.min(b).min(c)
}

/// Standard normal cumulative distribution function.
#[inline]
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z * core::f64::consts::FRAC_1_SQRT_2))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_cdf_reference_values() {
        assert!(abs(normal_cdf(0.0) - 0.5) < 1e-15);
        // Phi(1) = 0.841344746068543...
        assert!(abs(normal_cdf(1.0) - 0.841_344_746_068_543) < 1e-12);
        assert!(abs(normal_cdf(-1.0) + normal_cdf(1.0) - 1.0) < 1e-15);
    }
}
