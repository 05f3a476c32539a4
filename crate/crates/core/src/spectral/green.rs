//! Direct-quadrature route to `(1 - α²∂ₓ²)^{-1}`: convolution with the
//! image-sum periodization of `g(x) = e^{-|x|/α} / (2α)`.
//!
//! The kernel has a slope jump at the origin, which sits on a grid node, so the
//! plain trapezoid rule is only second-order accurate there. The jump
//! contributions are known in closed form (every odd derivative of `g` jumps by
//! `-1/α^{r+1}`), and the Euler–Maclaurin end corrections remove them. The
//! corrected sum converges geometrically for `h/α < 2π`.

use log::warn;
use num_complex::Complex64;

use super::{derivative_symbol, transform_forward, transform_inverse, Field};
use crate::error::{Error, Result};

/// Images are dropped once `e^{-mL/α}` falls below this.
const IMAGE_CUTOFF: f64 = 1e-16;
const MAX_IMAGES: usize = 100_000;
/// Kernel mass lost to image truncation above which a warning is logged.
const MASS_WARNING: f64 = 1e-12;

/// `B_2, B_4, ..., B_20`.
const BERNOULLI_EVEN: [f64; 10] = [
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
    -3617.0 / 510.0,
    43867.0 / 798.0,
    -174611.0 / 330.0,
];

fn image_count(alpha: f64, period: f64) -> usize {
    let needed = (-IMAGE_CUTOFF.ln() * alpha / period).floor() as usize + 1;
    needed.min(MAX_IMAGES)
}

/// Kernel mass (out of 1) not represented after truncating the image sum.
pub fn kernel_truncation_mass(alpha: f64, period: f64) -> f64 {
    let m = image_count(alpha, period) as f64;
    0.5 * (-(m + 1.0) * period / alpha).exp() + 0.5 * (-m * period / alpha).exp()
}

fn periodized_kernel(alpha: f64, period: f64, x: f64, images: usize) -> f64 {
    let norm = 0.5 / alpha;
    let mut acc = norm * (-x.abs() / alpha).exp();
    for m in 1..=images {
        let shift = m as f64 * period;
        acc += norm * (-(x + shift).abs() / alpha).exp();
        acc += norm * (-(x - shift).abs() / alpha).exp();
    }
    acc
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `(g_per ∗ f)(x_j)` by corrected trapezoid quadrature. Requires `α > 0` and
/// `h/α < π`.
pub fn green_convolve(f: &Field, alpha: f64) -> Result<Field> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::OutOfRange {
            what: "alpha",
            value: alpha,
            allowed: "(0, ∞)".into(),
        });
    }
    let grid = f.grid().clone();
    let n = grid.n_points();
    let h = grid.spacing();
    let period = grid.period();
    if h / alpha >= std::f64::consts::PI {
        return Err(Error::OutOfRange {
            what: "alpha",
            value: alpha,
            allowed: format!(
                "> h/π = {:e} (kernel unresolved on this grid)",
                h / std::f64::consts::PI
            ),
        });
    }
    let lost = kernel_truncation_mass(alpha, period);
    if lost > MASS_WARNING {
        warn!("green_convolve: image truncation drops {lost:e} of the kernel mass (alpha = {alpha}, L = {period})");
    }

    let images = image_count(alpha, period);
    let kernel: Vec<f64> = (0..n)
        .map(|m| periodized_kernel(alpha, period, m as f64 * h, images))
        .collect();

    let u = f.samples();
    let mut out: Vec<f64> = (0..n)
        .map(|j| {
            let mut acc = 0.0;
            for (m, k) in kernel.iter().enumerate() {
                acc += k * u[(j + n - m) % n];
            }
            h * acc
        })
        .collect();

    // Euler–Maclaurin jump terms: Σ_q B_{2q} h^{2q}/(2q)! Σ_{r odd} C(2q-1, r) f^{(2q-1-r)} / α^{r+1}.
    // As a function of f this is a polynomial symbol in iξ; applying it in
    // coefficient space avoids forming large high-order derivative fields.
    let mut spectrum = transform_forward(f)?;
    for (j, c) in spectrum.coeffs_mut().iter_mut().enumerate() {
        let mut symbol = Complex64::new(0.0, 0.0);
        let mut factorial = 1.0;
        for (q, b) in BERNOULLI_EVEN.iter().enumerate() {
            let order = 2 * q + 2;
            factorial *= ((order - 1) * order) as f64;
            let weight = b * h.powi(order as i32) / factorial;
            let m = order - 1;
            let mut r = 1;
            while r <= m {
                symbol += weight * binomial(m, r) * derivative_symbol(&grid, j, (m - r) as u32)
                    / alpha.powi(r as i32 + 1);
                r += 2;
            }
        }
        *c *= symbol;
    }
    let correction = transform_inverse(&spectrum)?;
    for (o, c) in out.iter_mut().zip(correction.samples()) {
        *o -= c;
    }

    Ok(Field::from_raw(&grid, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{helmholtz_inverse, Grid};
    use std::f64::consts::PI;

    fn relative(a: &Field, b: &Field) -> f64 {
        a.l2_distance(b).unwrap() / b.l2_norm()
    }

    #[test]
    fn unit_mass() {
        let g = Grid::new(256, 2.0 * PI).unwrap();
        let c = Field::from_fn(&g, |_| 2.5).unwrap();
        for alpha in [0.05, 0.3, 0.9, 3.0] {
            let out = green_convolve(&c, alpha).unwrap();
            assert!(out.linf_distance(&c).unwrap() < 1e-10, "alpha {alpha}");
        }
    }

    #[test]
    fn matches_eigenvalue_on_cos4x() {
        let g = Grid::new(1024, 2.0 * PI).unwrap();
        let f = Field::from_fn(&g, |x| (4.0 * x).cos()).unwrap();
        let alpha: f64 = 0.3;
        let out = green_convolve(&f, alpha).unwrap();
        let expected = f.scale(1.0 / (1.0 + alpha * alpha * 16.0));
        assert!(out.linf_distance(&expected).unwrap() < 1e-10);
        assert!(relative(&out, &helmholtz_inverse(&f, alpha).unwrap()) < 1e-10);
    }

    #[test]
    fn small_alpha_tends_to_identity_quadratically() {
        let g = Grid::new(1024, 2.0 * PI).unwrap();
        let f = Field::from_fn(&g, |x| x.sin() + 0.3 * (3.0 * x).cos()).unwrap();
        let e1 = green_convolve(&f, 0.02).unwrap().linf_distance(&f).unwrap();
        let e2 = green_convolve(&f, 0.01).unwrap().linf_distance(&f).unwrap();
        let ratio = e1 / e2;
        assert!((ratio - 4.0).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn rejects_unresolved_or_bad_alpha() {
        let g = Grid::new(64, 2.0 * PI).unwrap();
        let f = Field::from_fn(&g, f64::sin).unwrap();
        assert!(green_convolve(&f, 0.0).is_err());
        assert!(green_convolve(&f, 0.01).is_err());
    }

    #[test]
    fn truncation_mass_is_negligible_for_moderate_alpha() {
        assert!(kernel_truncation_mass(0.9, 2.0 * PI) < 1e-16);
        assert!(kernel_truncation_mass(1e6, 1.0) > 1e-12);
    }
}
