//! Periodic grid, Fourier transforms and the Fourier-multiplier operators used
//! by the solver and the analysis layer.
//!
//! Coefficients are stored in FFT order: index `j < N/2` holds wavenumber `j`,
//! index `j >= N/2` holds `j - N`, so the unpaired Nyquist mode sits at
//! wavenumber `-N/2`. The normalization is `c_k = (1/N) Σ_j u(x_j) e^{-iξ_k x_j}`,
//! which makes Parseval read `‖u‖²_{L²} = L Σ_k |c_k|²`.

mod green;

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub use green::{green_convolve, kernel_truncation_mass};

/// Absolute Hermitian-symmetry tolerance, scaled by `max(1, max|c_k|)`.
pub const HERMITIAN_TOL: f64 = 1e-12;

struct GridInner {
    n_points: usize,
    period: f64,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

/// Equispaced periodic grid `x_j = jL/N`, `j = 0..N-1`.
///
/// Cloning is cheap: FFT plans are shared, and `Fft` is `Send + Sync`.
#[derive(Clone)]
pub struct Grid(Arc<GridInner>);

impl Grid {
    pub fn new(n_points: usize, period: f64) -> Result<Self> {
        if n_points < 8 || !n_points.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "n_points must be a power of two >= 8, got {n_points}"
            )));
        }
        if !(period.is_finite() && period > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "period must be positive and finite, got {period}"
            )));
        }
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n_points);
        let inverse = planner.plan_fft_inverse(n_points);
        Ok(Grid(Arc::new(GridInner {
            n_points,
            period,
            forward,
            inverse,
        })))
    }

    pub fn n_points(&self) -> usize {
        self.0.n_points
    }

    pub fn period(&self) -> f64 {
        self.0.period
    }

    pub fn spacing(&self) -> f64 {
        self.0.period / self.0.n_points as f64
    }

    pub fn node(&self, j: usize) -> f64 {
        j as f64 * self.spacing()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_points()).map(|j| self.node(j)).collect()
    }

    /// Integer wavenumber stored at coefficient index `index`.
    pub fn wavenumber(&self, index: usize) -> i64 {
        let n = self.n_points();
        if index < n / 2 {
            index as i64
        } else {
            index as i64 - n as i64
        }
    }

    /// Coefficient index holding wavenumber `k`, if it is on the grid.
    pub fn index_of(&self, k: i64) -> Option<usize> {
        let half = (self.n_points() / 2) as i64;
        if k < -half || k >= half {
            return None;
        }
        Some(if k >= 0 {
            k as usize
        } else {
            (k + self.n_points() as i64) as usize
        })
    }

    /// Angular frequency `ξ_k = 2πk/L` at coefficient index `index`.
    pub fn frequency(&self, index: usize) -> f64 {
        2.0 * PI * self.wavenumber(index) as f64 / self.period()
    }

    pub fn frequencies(&self) -> Vec<f64> {
        (0..self.n_points()).map(|j| self.frequency(j)).collect()
    }

    pub fn nyquist_index(&self) -> usize {
        self.n_points() / 2
    }

    /// `|ξ|` of the Nyquist mode, the largest frequency on the grid.
    pub fn max_frequency(&self) -> f64 {
        PI * self.n_points() as f64 / self.period()
    }

    /// Largest `|k|` kept by the two-thirds rule.
    pub fn dealias_limit(&self) -> usize {
        self.n_points() / 3
    }

    /// Same period, `factor` times as many points.
    pub fn refined(&self, factor: usize) -> Result<Grid> {
        Grid::new(self.n_points() * factor, self.period())
    }

    pub(crate) fn fft_forward(&self, buf: &mut [Complex64]) {
        self.0.forward.process(buf);
    }

    pub(crate) fn fft_inverse(&self, buf: &mut [Complex64]) {
        self.0.inverse.process(buf);
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.n_points() == other.n_points() && self.period().to_bits() == other.period().to_bits()
    }
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("n_points", &self.n_points())
            .field("period", &self.period())
            .finish()
    }
}

/// Real samples `u(x_j)` on a grid, optionally tagged with a time and a filter width.
#[derive(Clone, Debug)]
pub struct Field {
    grid: Grid,
    samples: Vec<f64>,
    time: Option<f64>,
    alpha: Option<f64>,
}

impl Field {
    pub fn new(grid: &Grid, samples: Vec<f64>) -> Result<Self> {
        if samples.len() != grid.n_points() {
            return Err(Error::InvalidField(format!(
                "expected {} samples, got {}",
                grid.n_points(),
                samples.len()
            )));
        }
        if let Some(j) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidField(format!(
                "sample {j} is not finite ({})",
                samples[j]
            )));
        }
        Ok(Self::from_raw(grid, samples))
    }

    /// Skips validation; used for intermediate results that are checked later.
    pub(crate) fn from_raw(grid: &Grid, samples: Vec<f64>) -> Self {
        Field {
            grid: grid.clone(),
            samples,
            time: None,
            alpha: None,
        }
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(f64) -> f64) -> Result<Self> {
        let samples = grid.nodes().into_iter().map(f).collect();
        Field::new(grid, samples)
    }

    pub fn zeros(grid: &Grid) -> Self {
        Self::from_raw(grid, vec![0.0; grid.n_points()])
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn time(&self) -> Option<f64> {
        self.time
    }

    pub fn alpha(&self) -> Option<f64> {
        self.alpha
    }

    pub fn with_time(mut self, t: f64) -> Self {
        self.time = Some(t);
        self
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = Some(alpha);
        self
    }

    pub fn is_finite(&self) -> bool {
        self.samples.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.samples.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Trapezoid-rule `∫ u dx` over one period.
    pub fn integral(&self) -> f64 {
        self.samples.iter().sum::<f64>() * self.grid.spacing()
    }

    /// Discrete `L²` norm `√(Σ u_j² · L/N)`.
    pub fn l2_norm(&self) -> f64 {
        (self.samples.iter().map(|v| v * v).sum::<f64>() * self.grid.spacing()).sqrt()
    }

    pub fn linf_distance(&self, other: &Field) -> Result<f64> {
        self.check_same_grid(other)?;
        Ok(self
            .samples
            .iter()
            .zip(&other.samples)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    pub fn l2_distance(&self, other: &Field) -> Result<f64> {
        Ok(self.sub(other)?.l2_norm())
    }

    pub fn sub(&self, other: &Field) -> Result<Field> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Field) -> Result<Field> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn scale(&self, factor: f64) -> Field {
        self.map(|v| factor * v)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field::from_raw(&self.grid, self.samples.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_with(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Result<Field> {
        self.check_same_grid(other)?;
        Ok(Field::from_raw(
            &self.grid,
            self.samples
                .iter()
                .zip(&other.samples)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    fn check_same_grid(&self, other: &Field) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch(format!(
                "{:?} vs {:?}",
                self.grid, other.grid
            )));
        }
        Ok(())
    }
}

/// Fourier coefficients of a real field, FFT order, `1/N` normalization.
#[derive(Clone, Debug)]
pub struct Spectrum {
    grid: Grid,
    coeffs: Vec<Complex64>,
}

impl Spectrum {
    pub fn from_coeffs(grid: &Grid, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != grid.n_points() {
            return Err(Error::InvalidArgument(format!(
                "expected {} coefficients, got {}",
                grid.n_points(),
                coeffs.len()
            )));
        }
        Ok(Spectrum {
            grid: grid.clone(),
            coeffs,
        })
    }

    pub fn zeros(grid: &Grid) -> Self {
        Spectrum {
            grid: grid.clone(),
            coeffs: vec![Complex64::new(0.0, 0.0); grid.n_points()],
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<Complex64> {
        self.coeffs
    }

    /// Coefficient of wavenumber `k`; zero when `k` is off the grid.
    pub fn coeff(&self, k: i64) -> Complex64 {
        self.grid
            .index_of(k)
            .map(|j| self.coeffs[j])
            .unwrap_or_default()
    }

    pub fn set_coeff(&mut self, k: i64, value: Complex64) -> Result<()> {
        let j = self.grid.index_of(k).ok_or(Error::OutOfRange {
            what: "wavenumber",
            value: k as f64,
            allowed: format!("[-{0}, {0})", self.grid.n_points() / 2),
        })?;
        self.coeffs[j] = value;
        Ok(())
    }

    /// `max |c_{-k} - conj(c_k)|` over paired modes, including the imaginary
    /// parts of the zero and Nyquist coefficients.
    pub fn hermitian_asymmetry(&self) -> f64 {
        let n = self.grid.n_points();
        let mut worst = self.coeffs[0].im.abs().max(self.coeffs[n / 2].im.abs());
        for j in 1..n / 2 {
            let d = self.coeffs[n - j] - self.coeffs[j].conj();
            worst = worst.max(d.norm());
        }
        worst
    }

    /// `L Σ_k |c_k|²`, the squared `L²` norm of the represented field.
    pub fn l2_norm_sq(&self) -> f64 {
        self.grid.period() * self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>()
    }

    /// `L Σ_k w(ξ_k) |c_k|²`.
    pub fn weighted_norm_sq(&self, weight: impl Fn(f64) -> f64) -> f64 {
        self.grid.period()
            * self
                .coeffs
                .iter()
                .enumerate()
                .map(|(j, c)| weight(self.grid.frequency(j)) * c.norm_sqr())
                .sum::<f64>()
    }

    /// Evaluates the trigonometric interpolant at an arbitrary point. The Nyquist
    /// mode contributes `Re(c) cos(ξ_N x)` so the interpolant is real.
    pub fn evaluate(&self, x: f64) -> f64 {
        self.evaluate_derivative(x, 0)
    }

    /// `order`-th derivative of the trigonometric interpolant at `x`.
    pub fn evaluate_derivative(&self, x: f64, order: u32) -> f64 {
        let n = self.grid.n_points();
        let mut acc = self.coeffs[0].re * if order == 0 { 1.0 } else { 0.0 };
        for j in 1..n / 2 {
            let xi = self.grid.frequency(j);
            let c = self.coeffs[j];
            let phase = Complex64::new(0.0, xi * x).exp();
            let factor = Complex64::new(0.0, xi).powu(order);
            // c_k e^{iξx} + conj(...) for the paired mode
            acc += 2.0 * (c * factor * phase).re;
        }
        let xi_n = self.grid.max_frequency();
        let nyq = self.coeffs[n / 2].re;
        acc += nyq * xi_n.powi(order as i32) * (xi_n * x + order as f64 * PI / 2.0).cos();
        acc
    }
}

/// Forward transform with the `1/N` normalization.
pub fn transform_forward(f: &Field) -> Result<Spectrum> {
    if let Some(j) = f.samples.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidField(format!(
            "sample {j} is not finite ({})",
            f.samples[j]
        )));
    }
    let n = f.grid.n_points();
    let mut buf: Vec<Complex64> = f.samples.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    f.grid.fft_forward(&mut buf);
    let inv_n = 1.0 / n as f64;
    buf.iter_mut().for_each(|c| *c *= inv_n);
    Ok(Spectrum {
        grid: f.grid.clone(),
        coeffs: buf,
    })
}

/// Inverse transform. Spectra within [`HERMITIAN_TOL`] of Hermitian symmetry are
/// symmetrized first; anything further off is rejected.
pub fn transform_inverse(s: &Spectrum) -> Result<Field> {
    let scale = s.coeffs.iter().fold(1.0_f64, |m, c| m.max(c.norm()));
    let asymmetry = s.hermitian_asymmetry();
    let tolerance = HERMITIAN_TOL * scale;
    if !(asymmetry <= tolerance) {
        return Err(Error::NonRealSpectrum {
            asymmetry,
            tolerance,
        });
    }
    let mut buf = symmetrized(&s.coeffs);
    s.grid.fft_inverse(&mut buf);
    Ok(Field::from_raw(
        &s.grid,
        buf.into_iter().map(|c| c.re).collect(),
    ))
}

fn symmetrized(coeffs: &[Complex64]) -> Vec<Complex64> {
    let n = coeffs.len();
    let mut out = coeffs.to_vec();
    out[0] = Complex64::new(coeffs[0].re, 0.0);
    out[n / 2] = Complex64::new(coeffs[n / 2].re, 0.0);
    for j in 1..n / 2 {
        let avg = 0.5 * (coeffs[j] + coeffs[n - j].conj());
        out[j] = avg;
        out[n - j] = avg.conj();
    }
    out
}

/// `c_k ↦ symbol(ξ_k) c_k`.
pub fn apply_multiplier(s: &Spectrum, symbol: impl Fn(f64) -> Complex64) -> Result<Spectrum> {
    let mut coeffs = s.coeffs.clone();
    for (j, c) in coeffs.iter_mut().enumerate() {
        let xi = s.grid.frequency(j);
        let m = symbol(xi);
        if !(m.re.is_finite() && m.im.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "multiplier symbol is not finite at ξ = {xi}"
            )));
        }
        *c *= m;
    }
    Ok(Spectrum {
        grid: s.grid.clone(),
        coeffs,
    })
}

fn real_multiplier(f: &Field, symbol: impl Fn(f64) -> f64) -> Result<Field> {
    let s = transform_forward(f)?;
    let out = apply_multiplier(&s, |xi| Complex64::new(symbol(xi), 0.0))?;
    transform_inverse(&out)
}

/// Symbol `(iξ)^order`, with the Nyquist coefficient zeroed for odd orders.
pub fn derivative_symbol(grid: &Grid, index: usize, order: u32) -> Complex64 {
    if order % 2 == 1 && index == grid.nyquist_index() {
        return Complex64::new(0.0, 0.0);
    }
    Complex64::new(0.0, grid.frequency(index)).powu(order)
}

pub fn derivative(f: &Field, order: u32) -> Result<Field> {
    if order == 0 {
        return Err(Error::InvalidArgument(
            "derivative order must be at least 1".into(),
        ));
    }
    let mut s = transform_forward(f)?;
    let grid = f.grid.clone();
    for (j, c) in s.coeffs.iter_mut().enumerate() {
        *c *= derivative_symbol(&grid, j, order);
    }
    transform_inverse(&s)
}

/// `(1 - α²∂ₓ²)^{-1}`, the multiplier `1/(1 + α²ξ²)`.
pub fn helmholtz_inverse(f: &Field, alpha: f64) -> Result<Field> {
    check_nonneg("alpha", alpha)?;
    if alpha == 0.0 {
        return Ok(f.clone());
    }
    let a2 = alpha * alpha;
    real_multiplier(f, |xi| 1.0 / (1.0 + a2 * xi * xi))
}

/// `(1 - α²∂ₓ²)`, the forward Helmholtz operator.
pub fn helmholtz_forward(f: &Field, alpha: f64) -> Result<Field> {
    check_nonneg("alpha", alpha)?;
    let a2 = alpha * alpha;
    real_multiplier(f, |xi| 1.0 + a2 * xi * xi)
}

/// `|ξ|^γ` with the zero mode mapped to zero for every `γ` (including `γ = 0`).
pub fn fractional_symbol(xi: f64, gamma: f64) -> f64 {
    if xi == 0.0 {
        0.0
    } else {
        xi.abs().powf(gamma)
    }
}

/// `Λ^γ`, `0 ≤ γ ≤ 2`.
pub fn fractional_laplacian(f: &Field, gamma: f64) -> Result<Field> {
    if !(0.0..=2.0).contains(&gamma) {
        return Err(Error::OutOfRange {
            what: "gamma",
            value: gamma,
            allowed: "[0, 2]".into(),
        });
    }
    real_multiplier(f, |xi| fractional_symbol(xi, gamma))
}

/// Bessel potential `J^s = (1 - ∂ₓ²)^{s/2}`.
pub fn js_operator(f: &Field, s: f64) -> Result<Field> {
    if !s.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "Sobolev index {s} is not finite"
        )));
    }
    real_multiplier(f, |xi| (1.0 + xi * xi).powf(0.5 * s))
}

/// Two-thirds rule: zero every coefficient with `|k| > N/3`.
pub fn dealias(s: &Spectrum) -> Spectrum {
    let limit = s.grid.dealias_limit() as i64;
    let mut out = s.clone();
    for (j, c) in out.coeffs.iter_mut().enumerate() {
        if s.grid.wavenumber(j).abs() > limit {
            *c = Complex64::new(0.0, 0.0);
        }
    }
    out
}

/// Translates the trigonometric interpolant: returns `x ↦ f(x - shift)`.
pub fn spectral_shift(f: &Field, shift: f64) -> Result<Field> {
    let grid = f.grid.clone();
    let mut s = transform_forward(f)?;
    let nyq = grid.nyquist_index();
    for (j, c) in s.coeffs.iter_mut().enumerate() {
        let xi = grid.frequency(j);
        if j == nyq {
            // the real interpolant carries the Nyquist mode as a cosine
            *c *= (xi * shift).cos();
        } else {
            *c *= Complex64::new(0.0, -xi * shift).exp();
        }
    }
    transform_inverse(&s)
}

/// Band-limited interpolation onto `target`, which must share the period.
/// Going up, the Nyquist coefficient is split evenly between `±N/2`; going
/// down, modes beyond the target's band are dropped.
pub fn resample(f: &Field, target: &Grid) -> Result<Field> {
    if f.grid.period().to_bits() != target.period().to_bits() {
        return Err(Error::GridMismatch(format!(
            "resample needs equal periods: {:?} vs {:?}",
            f.grid, target
        )));
    }
    let src = transform_forward(f)?;
    let n_src = f.grid.n_points() as i64;
    let n_dst = target.n_points() as i64;
    let mut out = Spectrum::zeros(target);
    if n_dst >= n_src {
        for k in (-n_src / 2 + 1)..(n_src / 2) {
            out.set_coeff(k, src.coeff(k))?;
        }
        if n_dst > n_src {
            let half = 0.5 * src.coeff(-n_src / 2).re;
            out.set_coeff(n_src / 2, Complex64::new(half, 0.0))?;
            out.set_coeff(-n_src / 2, Complex64::new(half, 0.0))?;
        } else {
            out.set_coeff(-n_src / 2, src.coeff(-n_src / 2))?;
        }
    } else {
        for k in (-n_dst / 2 + 1)..(n_dst / 2) {
            out.set_coeff(k, src.coeff(k))?;
        }
    }
    transform_inverse(&out)
}

fn check_nonneg(what: &'static str, value: f64) -> Result<()> {
    if !(value.is_finite() && value >= 0.0) {
        return Err(Error::OutOfRange {
            what,
            value,
            allowed: "[0, ∞)".into(),
        });
    }
    Ok(())
}
