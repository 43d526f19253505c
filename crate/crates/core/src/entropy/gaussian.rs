//! Discretized Gaussian likelihood shared by the training rate term and the
//! integer coding tables.

use std::f64::consts::{LN_2, SQRT_2};

/// Lower bound on a bin probability before taking the logarithm.
pub const LIKELIHOOD_FLOOR: f64 = 1e-9;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

pub fn normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Probability that a Gaussian residual with scale `sigma` falls in the unit
/// bin centred on `r`. Evaluated on `|r|` so the upper tail never suffers
/// cancellation.
pub fn bin_mass(r: f64, sigma: f64) -> f64 {
    let v = r.abs();
    normal_cdf((0.5 - v) / sigma) - normal_cdf((-0.5 - v) / sigma)
}

/// `(mass, d mass / d r, d mass / d sigma)`.
pub fn bin_mass_grad(r: f64, sigma: f64) -> (f64, f64, f64) {
    let v = r.abs();
    let a = (0.5 - v) / sigma;
    let b = (-0.5 - v) / sigma;
    let mass = normal_cdf(a) - normal_cdf(b);
    let (pa, pb) = (normal_pdf(a), normal_pdf(b));
    let dv = (pb - pa) / sigma;
    let dr = if r < 0.0 { -dv } else { dv };
    let ds = (pb * b - pa * a) / sigma;
    (mass, dr, ds)
}

/// Bits of one residual plus its partial derivatives.
pub fn bits_grad(r: f64, sigma: f64) -> (f64, f64, f64) {
    let (m, dr, ds) = bin_mass_grad(r, sigma);
    if m < LIKELIHOOD_FLOOR {
        return (-LIKELIHOOD_FLOOR.log2(), 0.0, 0.0);
    }
    let k = -1.0 / (m * LN_2);
    (-m.log2(), k * dr, k * ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_scale_centre_bin() {
        // erf(0.5 / sqrt 2) = 0.382924922548026
        assert!((bin_mass(0.0, 1.0) - 0.382_924_922_548_026).abs() < 1e-12);
    }

    #[test]
    fn derivatives_match_differences() {
        for &(r, s) in &[(0.3, 1.0), (-1.7, 0.6), (2.2, 3.0), (0.0, 0.4)] {
            let (_, dr, ds) = bits_grad(r, s);
            let e = 1e-6;
            let fr = (bits_grad(r + e, s).0 - bits_grad(r - e, s).0) / (2.0 * e);
            let fs = (bits_grad(r, s + e).0 - bits_grad(r, s - e).0) / (2.0 * e);
            if r != 0.0 {
                assert!((dr - fr).abs() < 1e-6, "{r} {s}: {dr} {fr}");
            }
            assert!((ds - fs).abs() < 1e-6, "{r} {s}: {ds} {fs}");
        }
    }
}
