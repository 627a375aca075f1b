//! Gamma-function constants shared by the kernel, lifting and scaling code.

use std::f64::consts::PI;

pub use statrs::function::beta::{beta, beta_reg};
pub use statrs::function::gamma::{gamma, ln_gamma};

/// Surface measure of the unit sphere S^{n-1} ⊂ ℝⁿ.
pub fn sphere_area(n: usize) -> f64 {
    let h = n as f64 / 2.0;
    2.0 * PI.powf(h) / gamma(h)
}

/// Volume of the unit ball in ℝⁿ.
pub fn ball_volume(n: usize) -> f64 {
    let h = n as f64 / 2.0;
    PI.powf(h) / gamma(h + 1.0)
}

/// Normalisation constant of the fractional Laplacian whose Fourier symbol is
/// |ξ|^{2s}: (−Δ)^s u(x) = C · P.V.∫ (u(x) − u(y)) / |x − y|^{n+2s} dy.
pub fn frac_laplacian_constant(n: usize, s: f64) -> f64 {
    let h = n as f64 / 2.0;
    s * 4f64.powf(s) * gamma(h + s) / (PI.powf(h) * gamma(1.0 - s))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_and_ball() {
        assert!((sphere_area(2) - 2.0 * PI).abs() < 1e-12);
        assert!((sphere_area(3) - 4.0 * PI).abs() < 1e-12);
        assert!((ball_volume(2) - PI).abs() < 1e-12);
        assert!((ball_volume(3) - 4.0 / 3.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn half_laplacian_constant_in_plane() {
        // C_{2,1/2} = 1/(2π)
        assert!((frac_laplacian_constant(2, 0.5) - 0.5 / PI).abs() < 1e-14);
        // C_{1,1/2} = 1/π
        assert!((frac_laplacian_constant(1, 0.5) - 1.0 / PI).abs() < 1e-14);
    }
}
