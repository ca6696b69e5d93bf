//! Thin wrappers over libm special functions used throughout the crate.

/// Gamma function.
pub fn gamma(x: f64) -> f64 {
    libm::tgamma(x)
}

/// Natural log of |Gamma(x)|.
pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// Bessel J_nu for the half-integer and integer orders needed by the radial
/// Fourier inversion: nu = d/2 - 1 and d/2 for d in {1, 2, 3}.
///
/// `bessel_kernel(nu2, u)` takes twice the order (-1, 0, 1, 2, 3) to keep the
/// call sites integer-only.
pub fn bessel_kernel(nu2: i32, u: f64) -> f64 {
    match nu2 {
        // J_{-1/2}(u) = sqrt(2/(pi u)) cos u
        -1 => (2.0 / (std::f64::consts::PI * u)).sqrt() * u.cos(),
        // J_{1/2}(u) = sqrt(2/(pi u)) sin u
        1 => (2.0 / (std::f64::consts::PI * u)).sqrt() * u.sin(),
        0 => libm::j0(u),
        2 => libm::j1(u),
        // J_{3/2}(u) = sqrt(2/(pi u)) (sin u / u - cos u)
        3 => (2.0 / (std::f64::consts::PI * u)).sqrt() * (u.sin() / u - u.cos()),
        _ => panic!("bessel_kernel: unsupported order {nu2}/2"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_reference_values() {
        assert!((gamma(0.5) - std::f64::consts::PI.sqrt()).abs() < 1e-15);
        assert!((gamma(5.0) - 24.0).abs() < 1e-12);
        // Gamma(1/3) = 2.678938534707747633...
        assert!((gamma(1.0 / 3.0) - 2.678938534707747633).abs() < 1e-13);
    }

    #[test]
    fn bessel_small_argument() {
        // J0(x) ~ 1 - x^2/4, J1(x) ~ x/2
        assert!((bessel_kernel(0, 1e-4) - (1.0 - 2.5e-9)).abs() < 1e-14);
        assert!((bessel_kernel(2, 1e-4) - 5e-5).abs() < 1e-12);
        // J_{3/2}(x) ~ x^{3/2} sqrt(2/pi)/3
        let x: f64 = 1e-3;
        let expect = (2.0 / std::f64::consts::PI).sqrt() * x.powf(1.5) / 3.0;
        assert!((bessel_kernel(3, x) - expect).abs() / expect < 1e-5);
    }
}
