//! Right-hand sides for the filtered Camassa–Holm and Burgers equations in
//! velocity form, RK4 and integrating-factor RK4 time stepping, breaking
//! detection, and the trajectory driver.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{fractional_symbol, Field, Grid};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const SPEED_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Equation {
    #[default]
    CamassaHolm,
    Burgers,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub alpha: f64,
    pub nu: f64,
    pub gamma: f64,
    pub dealias: bool,
    pub equation: Equation,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            alpha: 0.0,
            nu: 0.0,
            gamma: 2.0,
            dealias: true,
            equation: Equation::CamassaHolm,
        }
    }
}

impl ModelParams {
    pub fn camassa_holm(alpha: f64) -> Self {
        ModelParams {
            alpha,
            ..Default::default()
        }
    }

    pub fn burgers() -> Self {
        ModelParams {
            equation: Equation::Burgers,
            ..Default::default()
        }
    }

    pub fn with_dissipation(mut self, nu: f64, gamma: f64) -> Self {
        self.nu = nu;
        self.gamma = gamma;
        self
    }

    /// The filter width actually seen by the dynamics.
    pub fn effective_alpha(&self) -> f64 {
        match self.equation {
            Equation::CamassaHolm => self.alpha,
            Equation::Burgers => 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::OutOfRange {
                what: "alpha",
                value: self.alpha,
                allowed: "[0, ∞)".into(),
            });
        }
        if !(self.nu.is_finite() && self.nu >= 0.0) {
            return Err(Error::OutOfRange {
                what: "nu",
                value: self.nu,
                allowed: "[0, ∞)".into(),
            });
        }
        if !(0.0..=2.0).contains(&self.gamma) {
            return Err(Error::OutOfRange {
                what: "gamma",
                value: self.gamma,
                allowed: "[0, 2]".into(),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    /// Integrating factor when `ν > 0`, classical RK4 otherwise.
    #[default]
    Auto,
    Rk4,
    IntegratingFactor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepControl {
    pub cfl: f64,
    pub dt_max: f64,
    pub t_end: f64,
    pub save_every: usize,
    pub breaking_slope_threshold: f64,
    pub norm_cap: f64,
    /// Fraction of `(1+ξ²)`-weighted energy allowed in the top third of the
    /// resolved band.
    pub tail_threshold: f64,
    /// Sobolev indices recorded along the run; the first one is checked against `norm_cap`.
    pub norm_indices: Vec<f64>,
    pub integrator: Integrator,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl {
            cfl: 0.3,
            dt_max: 1e-3,
            t_end: 0.1,
            save_every: 1,
            breaking_slope_threshold: -1e4,
            norm_cap: 1e6,
            tail_threshold: 0.1,
            norm_indices: vec![2.0, 1.0],
            integrator: Integrator::Auto,
        }
    }
}

impl StepControl {
    pub fn validate(&self) -> Result<()> {
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(Error::OutOfRange {
                what: "cfl",
                value: self.cfl,
                allowed: "(0, 1]".into(),
            });
        }
        if !(self.t_end.is_finite() && self.t_end > 0.0) {
            return Err(Error::OutOfRange {
                what: "t_end",
                value: self.t_end,
                allowed: "(0, ∞)".into(),
            });
        }
        if !(self.dt_max > 0.0) {
            return Err(Error::OutOfRange {
                what: "dt_max",
                value: self.dt_max,
                allowed: "(0, ∞)".into(),
            });
        }
        if self.save_every == 0 {
            return Err(Error::InvalidArgument(
                "save_every must be at least 1".into(),
            ));
        }
        if !(self.breaking_slope_threshold < 0.0) {
            return Err(Error::OutOfRange {
                what: "breaking_slope_threshold",
                value: self.breaking_slope_threshold,
                allowed: "(-∞, 0)".into(),
            });
        }
        if !(self.norm_cap > 0.0) {
            return Err(Error::OutOfRange {
                what: "norm_cap",
                value: self.norm_cap,
                allowed: "(0, ∞)".into(),
            });
        }
        Ok(())
    }

    fn uses_integrating_factor(&self, p: &ModelParams) -> bool {
        match self.integrator {
            Integrator::Auto => p.nu > 0.0,
            Integrator::Rk4 => false,
            Integrator::IntegratingFactor => true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BreakingTrigger {
    Slope,
    SpectralTail,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    BreakingDetected { time: f64, trigger: BreakingTrigger },
    NormCapExceeded { time: f64 },
    Unstable { time: f64, detail: String },
}

impl RunStatus {
    pub fn is_completed(&self) -> bool {
        matches!(self, RunStatus::Completed)
    }

    pub fn label(&self) -> &'static str {
        match self {
            RunStatus::Completed => "completed",
            RunStatus::BreakingDetected { .. } => "breaking_detected",
            RunStatus::NormCapExceeded { .. } => "norm_cap_exceeded",
            RunStatus::Unstable { .. } => "unstable",
        }
    }

    pub fn time(&self) -> Option<f64> {
        match self {
            RunStatus::Completed => None,
            RunStatus::BreakingDetected { time, .. }
            | RunStatus::NormCapExceeded { time }
            | RunStatus::Unstable { time, .. } => Some(*time),
        }
    }
}

/// Scalar diagnostics of one state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub time: f64,
    pub norms: Vec<f64>,
    pub min_slope: f64,
    /// `∫u² + α²(∂ₓu)²` with the run's `α`.
    pub energy: f64,
    pub mean: f64,
    pub tail_fraction: f64,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub params: ModelParams,
    pub norm_indices: Vec<f64>,
    pub records: Vec<Record>,
    pub fields: Vec<Field>,
    pub status: RunStatus,
    pub steps: usize,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.time).collect()
    }

    pub fn fields(&self) -> &[Field] {
        &self.fields
    }

    pub fn final_field(&self) -> &Field {
        self.fields
            .last()
            .expect("trajectory holds the initial field")
    }

    pub fn norm_series(&self, index: usize) -> Vec<f64> {
        self.records.iter().map(|r| r.norms[index]).collect()
    }

    pub fn min_slope_series(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.min_slope).collect()
    }

    pub fn energy_series(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.energy).collect()
    }
}

fn to_spectrum(grid: &Grid, u: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = u.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    grid.fft_forward(&mut buf);
    let inv_n = 1.0 / u.len() as f64;
    buf.iter_mut().for_each(|c| *c *= inv_n);
    buf
}

fn to_samples(grid: &Grid, mut c: Vec<Complex64>) -> Vec<f64> {
    grid.fft_inverse(&mut c);
    c.into_iter().map(|z| z.re).collect()
}

fn first_derivative(grid: &Grid, c: &[Complex64]) -> Vec<Complex64> {
    let nyq = grid.nyquist_index();
    c.iter()
        .enumerate()
        .map(|(j, &v)| {
            if j == nyq {
                ZERO
            } else {
                Complex64::new(0.0, grid.frequency(j)) * v
            }
        })
        .collect()
}

fn project(grid: &Grid, c: &mut [Complex64], dealias: bool) {
    if !dealias {
        return;
    }
    let limit = grid.dealias_limit() as i64;
    for (j, v) in c.iter_mut().enumerate() {
        if grid.wavenumber(j).abs() > limit {
            *v = ZERO;
        }
    }
}

/// Spectrum of `u` and of the products `u uₓ`, `u²`, `uₓ²`, each passed
/// through the optional dealiasing projection.
struct Products {
    u: Vec<Complex64>,
    u_ux: Vec<Complex64>,
    u_sq: Vec<Complex64>,
    ux_sq: Vec<Complex64>,
}

fn products(grid: &Grid, u: &[f64], dealias: bool, need_squares: bool) -> Products {
    let cu = to_spectrum(grid, u);
    let ux = to_samples(grid, first_derivative(grid, &cu));
    let prod = |f: &dyn Fn(usize) -> f64| {
        let v: Vec<f64> = (0..u.len()).map(f).collect();
        let mut c = to_spectrum(grid, &v);
        project(grid, &mut c, dealias);
        c
    };
    let u_ux = prod(&|j| u[j] * ux[j]);
    let (u_sq, ux_sq) = if need_squares {
        (prod(&|j| u[j] * u[j]), prod(&|j| ux[j] * ux[j]))
    } else {
        (Vec::new(), Vec::new())
    };
    Products {
        u: cu,
        u_ux,
        u_sq,
        ux_sq,
    }
}

/// Spectrum of the nonlinear (non-dissipative) part of the right-hand side.
fn nonlinear_spectrum(grid: &Grid, u: &[f64], p: &ModelParams) -> (Vec<Complex64>, Vec<Complex64>) {
    let alpha = p.effective_alpha();
    let n = u.len();
    if p.equation == Equation::Burgers {
        let pr = products(grid, u, p.dealias, false);
        let out = pr.u_ux.iter().map(|&c| -3.0 * c).collect();
        return (pr.u, out);
    }
    let pr = products(grid, u, p.dealias, true);
    let a2 = alpha * alpha;
    let nyq = grid.nyquist_index();
    let out = (0..n)
        .map(|j| {
            let xi = grid.frequency(j);
            let d = if j == nyq {
                ZERO
            } else {
                Complex64::new(0.0, xi)
            };
            let pressure = (pr.u_sq[j] + 0.5 * a2 * pr.ux_sq[j]) / (1.0 + a2 * xi * xi);
            -pr.u_ux[j] - d * pressure
        })
        .collect();
    (pr.u, out)
}

fn dissipation_symbol(grid: &Grid, j: usize, p: &ModelParams) -> f64 {
    if p.nu == 0.0 {
        0.0
    } else {
        p.nu * fractional_symbol(grid.frequency(j), p.gamma)
    }
}

fn rhs_samples(grid: &Grid, u: &[f64], p: &ModelParams) -> Vec<f64> {
    let (cu, mut out) = nonlinear_spectrum(grid, u, p);
    for (j, o) in out.iter_mut().enumerate() {
        *o -= dissipation_symbol(grid, j, p) * cu[j];
    }
    to_samples(grid, out)
}

fn checked(f: &Field, values: Vec<f64>, what: &str) -> Result<Field> {
    if let Some(j) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Instability {
            time: f.time().unwrap_or(f64::NAN),
            detail: format!("{what}: non-finite value at node {j}"),
        });
    }
    let out = Field::from_raw(f.grid(), values);
    Ok(match f.time() {
        Some(t) => out.with_time(t),
        None => out,
    })
}

fn check_input(u: &Field, p: &ModelParams) -> Result<()> {
    p.validate()?;
    if !u.is_finite() {
        return Err(Error::Instability {
            time: u.time().unwrap_or(f64::NAN),
            detail: "non-finite input field".into(),
        });
    }
    Ok(())
}

/// `-u uₓ - νΛ^γu - ∂ₓ(1-α²∂ₓ²)^{-1}(u² + (α²/2)uₓ²)`.
pub fn rhs_ch(u: &Field, p: &ModelParams) -> Result<Field> {
    check_input(u, p)?;
    let q = ModelParams {
        equation: Equation::CamassaHolm,
        ..*p
    };
    checked(u, rhs_samples(u.grid(), u.samples(), &q), "rhs_ch")
}

/// `-3u uₓ - νΛ^γu`; `α` is ignored.
pub fn rhs_burgers(u: &Field, p: &ModelParams) -> Result<Field> {
    check_input(u, p)?;
    let q = ModelParams {
        equation: Equation::Burgers,
        ..*p
    };
    checked(u, rhs_samples(u.grid(), u.samples(), &q), "rhs_burgers")
}

/// Right-hand side selected by `p.equation`.
pub fn rhs(u: &Field, p: &ModelParams) -> Result<Field> {
    check_input(u, p)?;
    checked(u, rhs_samples(u.grid(), u.samples(), p), "rhs")
}

/// `-3u uₓ - α²∂ₓ³(1-α²∂ₓ²)^{-1}(u²) - (α²/2)∂ₓ(1-α²∂ₓ²)^{-1}(uₓ²)`, no dissipation.
pub fn rhs_equivalent_form(u: &Field, p: &ModelParams) -> Result<Field> {
    check_input(u, p)?;
    let grid = u.grid();
    let pr = products(grid, u.samples(), p.dealias, true);
    let a2 = p.alpha * p.alpha;
    let nyq = grid.nyquist_index();
    let out: Vec<Complex64> = (0..grid.n_points())
        .map(|j| {
            let xi = grid.frequency(j);
            let h = 1.0 / (1.0 + a2 * xi * xi);
            let (d1, d3) = if j == nyq {
                (ZERO, ZERO)
            } else {
                let d = Complex64::new(0.0, xi);
                (d, d * d * d)
            };
            -3.0 * pr.u_ux[j] - a2 * d3 * h * pr.u_sq[j] - 0.5 * a2 * d1 * h * pr.ux_sq[j]
        })
        .collect();
    checked(u, to_samples(grid, out), "rhs_equivalent_form")
}

/// `I = α²∂ₓ(1-α²∂ₓ²)^{-1}[∂ₓ²(u²) + ½uₓ²]`; zero when `α = 0`.
pub fn source_term_i(u: &Field, p: &ModelParams) -> Result<Field> {
    check_input(u, p)?;
    let grid = u.grid();
    let pr = products(grid, u.samples(), p.dealias, true);
    let a2 = p.alpha * p.alpha;
    let nyq = grid.nyquist_index();
    let out: Vec<Complex64> = (0..grid.n_points())
        .map(|j| {
            if j == nyq {
                return ZERO;
            }
            let xi = grid.frequency(j);
            let d = Complex64::new(0.0, xi);
            a2 * d / (1.0 + a2 * xi * xi) * (-xi * xi * pr.u_sq[j] + 0.5 * pr.ux_sq[j])
        })
        .collect();
    checked(u, to_samples(grid, out), "source_term_i")
}

/// Advective bound `cfl·Δx / max(ε, 3 max|u|)`, capped by `dt_max` and, for
/// explicit stepping with `ν > 0`, by `2 / (ν ξ_max^γ)`.
pub fn cfl_dt(u: &Field, c: &StepControl, p: &ModelParams) -> f64 {
    let grid = u.grid();
    let speed = (3.0 * u.max_abs()).max(SPEED_FLOOR);
    let mut dt = c.dt_max.min(c.cfl * grid.spacing() / speed);
    if p.nu > 0.0 && !c.uses_integrating_factor(p) {
        let stiff = p.nu * fractional_symbol(grid.max_frequency(), p.gamma);
        if stiff > 0.0 {
            dt = dt.min(2.0 / stiff);
        }
    }
    dt
}

fn axpy(a: f64, x: &[f64], y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(xv, yv)| yv + a * xv).collect()
}

fn stage(u: &Field, samples: Vec<f64>, t: Option<f64>) -> Field {
    let f = Field::from_raw(u.grid(), samples);
    match t {
        Some(t) => f.with_time(t),
        None => f,
    }
}

fn require_finite(f: &Field, what: &str) -> Result<()> {
    if let Some(j) = f.samples().iter().position(|v| !v.is_finite()) {
        return Err(Error::Instability {
            time: f.time().unwrap_or(f64::NAN),
            detail: format!("{what}: non-finite value at node {j}"),
        });
    }
    Ok(())
}

/// One classical RK4 step of `u' = rhs(u)`. The output carries `t + dt` when
/// the input is time-stamped.
pub fn step_rk4(u: &Field, dt: f64, rhs: impl Fn(&Field) -> Result<Field>) -> Result<Field> {
    let t = u.time();
    let at = |s: f64| t.map(|t| t + s);
    let x = u.samples();
    let k1 = rhs(u)?;
    require_finite(&k1, "stage 1")?;
    let k2 = rhs(&stage(u, axpy(0.5 * dt, k1.samples(), x), at(0.5 * dt)))?;
    require_finite(&k2, "stage 2")?;
    let k3 = rhs(&stage(u, axpy(0.5 * dt, k2.samples(), x), at(0.5 * dt)))?;
    require_finite(&k3, "stage 3")?;
    let k4 = rhs(&stage(u, axpy(dt, k3.samples(), x), at(dt)))?;
    require_finite(&k4, "stage 4")?;
    let out: Vec<f64> = (0..x.len())
        .map(|j| {
            x[j] + dt / 6.0
                * (k1.samples()[j]
                    + 2.0 * k2.samples()[j]
                    + 2.0 * k3.samples()[j]
                    + k4.samples()[j])
        })
        .collect();
    let next = stage(u, out, at(dt));
    require_finite(&next, "update")?;
    Ok(next)
}

/// Multiplies every mode by `e^{-ν|ξ|^γ τ}`.
fn decay(grid: &Grid, x: &[f64], p: &ModelParams, tau: f64) -> Vec<f64> {
    let mut c = to_spectrum(grid, x);
    for (j, v) in c.iter_mut().enumerate() {
        *v *= (-dissipation_symbol(grid, j, p) * tau).exp();
    }
    to_samples(grid, c)
}

/// Lawson integrating-factor RK4 step with the dissipative term `νΛ^γ`
/// integrated exactly. With `ν = 0` it reduces to [`step_rk4`] on the same
/// right-hand side.
pub fn step_if_rk4(u: &Field, dt: f64, p: &ModelParams) -> Result<Field> {
    check_input(u, p)?;
    let grid = u.grid().clone();
    step_if_rk4_with(u, dt, p, |f| {
        let (_, n) = nonlinear_spectrum(&grid, f.samples(), p);
        Ok(Field::from_raw(&grid, to_samples(&grid, n)))
    })
}

/// [`step_if_rk4`] with a caller-supplied nonlinear part.
pub fn step_if_rk4_with(
    u: &Field,
    dt: f64,
    p: &ModelParams,
    nonlinear: impl Fn(&Field) -> Result<Field>,
) -> Result<Field> {
    let grid = u.grid().clone();
    let t = u.time();
    let at = |s: f64| t.map(|t| t + s);
    let half = 0.5 * dt;
    let e = |x: &[f64]| decay(&grid, x, p, half);
    let x = u.samples();

    let k1 = nonlinear(u)?;
    require_finite(&k1, "stage 1")?;
    let k2 = nonlinear(&stage(u, e(&axpy(half, k1.samples(), x)), at(half)))?;
    require_finite(&k2, "stage 2")?;
    let eu = e(x);
    let k3 = nonlinear(&stage(u, axpy(half, k2.samples(), &eu), at(half)))?;
    require_finite(&k3, "stage 3")?;
    let e2u = e(&eu);
    let ek3 = e(k3.samples());
    let k4 = nonlinear(&stage(u, axpy(dt, &ek3, &e2u), at(dt)))?;
    require_finite(&k4, "stage 4")?;

    let e2k1 = e(&e(k1.samples()));
    let k23: Vec<f64> = k2
        .samples()
        .iter()
        .zip(k3.samples())
        .map(|(a, b)| a + b)
        .collect();
    let ek23 = e(&k23);
    let out: Vec<f64> = (0..x.len())
        .map(|j| e2u[j] + dt / 6.0 * (e2k1[j] + 2.0 * ek23[j] + k4.samples()[j]))
        .collect();
    let next = stage(u, out, at(dt));
    require_finite(&next, "update")?;
    Ok(next)
}

/// One step with the integrator selected by `c`.
pub fn advance(u: &Field, dt: f64, p: &ModelParams, c: &StepControl) -> Result<Field> {
    if c.uses_integrating_factor(p) {
        step_if_rk4(u, dt, p)
    } else {
        check_input(u, p)?;
        let grid = u.grid().clone();
        step_rk4(u, dt, |f| {
            checked(f, rhs_samples(&grid, f.samples(), p), "rhs")
        })
    }
}

/// Diagnostics of one state at time `t`.
pub fn diagnose(u: &Field, t: f64, alpha: f64, norm_indices: &[f64]) -> Record {
    let grid = u.grid();
    let c = to_spectrum(grid, u.samples());
    let period = grid.period();
    let weighted = |w: &dyn Fn(f64) -> f64| -> f64 {
        c.iter()
            .enumerate()
            .map(|(j, v)| w(grid.frequency(j)) * v.norm_sqr())
            .sum::<f64>()
            * period
    };
    let norms = norm_indices
        .iter()
        .map(|&s| weighted(&|xi| (1.0 + xi * xi).powf(s)).sqrt())
        .collect();
    let energy = weighted(&|xi| 1.0 + alpha * alpha * xi * xi);

    let ux = to_samples(grid, first_derivative(grid, &c));
    let min_slope = ux.iter().cloned().fold(f64::INFINITY, f64::min);

    let band = grid.dealias_limit() as i64;
    let lower = 2 * band / 3;
    let mut top = 0.0;
    let mut total = 0.0;
    for (j, v) in c.iter().enumerate() {
        let xi = grid.frequency(j);
        let e = (1.0 + xi * xi) * v.norm_sqr();
        total += e;
        let k = grid.wavenumber(j).abs();
        if k > lower {
            top += e;
        }
    }
    let tail_fraction = if total > 0.0 { top / total } else { 0.0 };

    Record {
        time: t,
        norms,
        min_slope,
        energy,
        mean: c[0].re,
        tail_fraction,
    }
}

fn classify(r: &Record, c: &StepControl) -> Option<RunStatus> {
    if let Some(&norm) = r.norms.first() {
        if norm > c.norm_cap || !norm.is_finite() {
            return Some(RunStatus::NormCapExceeded { time: r.time });
        }
    }
    if r.min_slope < c.breaking_slope_threshold {
        return Some(RunStatus::BreakingDetected {
            time: r.time,
            trigger: BreakingTrigger::Slope,
        });
    }
    if r.tail_fraction > c.tail_threshold {
        return Some(RunStatus::BreakingDetected {
            time: r.time,
            trigger: BreakingTrigger::SpectralTail,
        });
    }
    None
}

/// Earliest trigger over a sequence of records: slope below the threshold,
/// first recorded norm above the cap, or more than `tail_threshold` of the
/// `(1+ξ²)`-weighted energy in the top third of the resolved band
/// (`|k| > 2K/3` with `K = N/3`).
pub fn detect_breaking(records: &[Record], c: &StepControl) -> RunStatus {
    records
        .iter()
        .find_map(|r| classify(r, c))
        .unwrap_or(RunStatus::Completed)
}

/// Runs one solution from `u0` to `c.t_end`. Breaking, norm-cap and
/// instability end the run early and are reported in the status.
pub fn solve(u0: &Field, p: &ModelParams, c: &StepControl) -> Result<Trajectory> {
    let mut out = solve_ensemble(&[(u0.clone(), *p)], c, 1)?;
    Ok(out.remove(0))
}

struct Member {
    params: ModelParams,
    state: Field,
    traj: Trajectory,
    active: bool,
}

/// Advances several solutions on one grid in lockstep: every step uses the
/// smallest CFL proposal among active members, so all runs share one time
/// sequence and one snapshot schedule. Stopped members keep their last state.
/// `jobs` threads advance members concurrently (`1` runs inline, `0` uses the
/// global rayon default).
pub fn solve_ensemble(
    members: &[(Field, ModelParams)],
    c: &StepControl,
    jobs: usize,
) -> Result<Vec<Trajectory>> {
    c.validate()?;
    let Some((first, _)) = members.first() else {
        return Ok(Vec::new());
    };
    for (u, p) in members {
        p.validate()?;
        if u.grid() != first.grid() {
            return Err(Error::GridMismatch(
                "ensemble members must share one grid".into(),
            ));
        }
        if !u.is_finite() {
            return Err(Error::InvalidField("non-finite initial datum".into()));
        }
    }

    let mut ms: Vec<Member> = members
        .iter()
        .map(|(u, p)| {
            let state = u.clone().with_time(0.0).with_alpha(p.effective_alpha());
            let record = diagnose(&state, 0.0, p.effective_alpha(), &c.norm_indices);
            let status = classify(&record, c);
            Member {
                params: *p,
                active: status.is_none(),
                traj: Trajectory {
                    params: *p,
                    norm_indices: c.norm_indices.clone(),
                    records: vec![record],
                    fields: vec![state.clone()],
                    status: status.unwrap_or(RunStatus::Completed),
                    steps: 0,
                },
                state,
            }
        })
        .collect();

    let pool = if jobs == 1 {
        None
    } else {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(jobs)
                .build()
                .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?,
        )
    };

    let mut t = 0.0;
    let mut step = 0usize;
    while t < c.t_end && ms.iter().any(|m| m.active) {
        let mut dt = ms
            .iter()
            .filter(|m| m.active)
            .map(|m| cfl_dt(&m.state, c, &m.params))
            .fold(f64::INFINITY, f64::min);
        let last = t + dt >= c.t_end * (1.0 - 1e-12);
        let t_next = if last { c.t_end } else { t + dt };
        if last {
            dt = c.t_end - t;
        }
        step += 1;
        let save = last || step.is_multiple_of(c.save_every);

        let advance_member = |m: &mut Member| {
            if !m.active {
                return;
            }
            match advance(&m.state, dt, &m.params, c) {
                Ok(next) => {
                    let next = next
                        .with_time(t_next)
                        .with_alpha(m.params.effective_alpha());
                    let record =
                        diagnose(&next, t_next, m.params.effective_alpha(), &c.norm_indices);
                    let status = classify(&record, c);
                    m.traj.steps = step;
                    if save || status.is_some() {
                        m.traj.records.push(record);
                        m.traj.fields.push(next.clone());
                    }
                    m.state = next;
                    if let Some(s) = status {
                        m.traj.status = s;
                        m.active = false;
                    }
                }
                Err(e) => {
                    m.traj.status = RunStatus::Unstable {
                        time: t,
                        detail: e.to_string(),
                    };
                    m.active = false;
                }
            }
        };
        match &pool {
            None => ms.iter_mut().for_each(advance_member),
            Some(pool) => pool.install(|| ms.par_iter_mut().for_each(advance_member)),
        }
        t = t_next;
    }

    Ok(ms.into_iter().map(|m| m.traj).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{
        derivative, fractional_laplacian, helmholtz_inverse, transform_forward, transform_inverse,
        Spectrum,
    };
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn grid(n: usize) -> Grid {
        Grid::new(n, 2.0 * PI).unwrap()
    }

    fn random_smooth(g: &Grid, kmax: i64, seed: u64) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = Spectrum::zeros(g);
        for k in 1..=kmax {
            let decay = (-(k as f64) / 4.0).exp();
            let c = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * decay;
            s.set_coeff(k, c).unwrap();
            s.set_coeff(-k, c.conj()).unwrap();
        }
        s.set_coeff(0, Complex64::new(rng.gen_range(-0.5..0.5), 0.0))
            .unwrap();
        transform_inverse(&s).unwrap()
    }

    fn sin_field(g: &Grid) -> Field {
        Field::from_fn(g, f64::sin).unwrap()
    }

    #[test]
    fn rhs_ch_of_constant_is_zero() {
        let g = grid(64);
        let c = Field::from_fn(&g, |_| 1.7).unwrap();
        for alpha in [0.0, 0.3, 1.0] {
            let r = rhs_ch(&c, &ModelParams::camassa_holm(alpha)).unwrap();
            assert!(r.max_abs() < 1e-14);
        }
    }

    #[test]
    fn rhs_ch_at_zero_alpha_is_burgers() {
        let g = grid(128);
        for seed in 0..5 {
            let u = random_smooth(&g, 30, seed);
            let ch = rhs_ch(&u, &ModelParams::camassa_holm(0.0)).unwrap();
            let b = rhs_burgers(&u, &ModelParams::burgers()).unwrap();
            assert!(ch.linf_distance(&b).unwrap() < 1e-12);
        }
    }

    #[test]
    fn rhs_ch_sine_mode_by_mode() {
        // sin·cos = ½ sin 2x; sin² + cos²/2 = ¾ - ¼ cos 2x; the inverse Helmholtz
        // symbol at k = 2 is 1/(1+4α²); ∂ₓ cos 2x = -2 sin 2x.
        let g = grid(64);
        let alpha: f64 = 1.0;
        let h2 = 1.0 / (1.0 + 4.0 * alpha * alpha);
        let expected = Field::from_fn(&g, |x| {
            let transport = -0.5 * (2.0 * x).sin();
            let pressure_grad = -0.25 * h2 * 2.0 * (2.0 * x).sin();
            transport + pressure_grad
        })
        .unwrap();
        let r = rhs_ch(&sin_field(&g), &ModelParams::camassa_holm(alpha)).unwrap();
        assert!(r.linf_distance(&expected).unwrap() < 1e-12);
    }

    #[test]
    fn rhs_burgers_examples() {
        let g = grid(64);
        let c = Field::from_fn(&g, |_| -0.4).unwrap();
        let visc = ModelParams::burgers().with_dissipation(1.0, 1.0);
        assert!(rhs_burgers(&c, &visc).unwrap().max_abs() < 1e-15);

        let r = rhs_burgers(&sin_field(&g), &ModelParams::burgers()).unwrap();
        let expected = Field::from_fn(&g, |x| -1.5 * (2.0 * x).sin()).unwrap();
        assert!(r.linf_distance(&expected).unwrap() < 1e-12);

        let cos = Field::from_fn(&g, f64::cos).unwrap();
        let p = ModelParams::burgers().with_dissipation(1.0, 2.0);
        let r = rhs_burgers(&cos, &p).unwrap();
        let expected = Field::from_fn(&g, |x| 1.5 * (2.0 * x).sin() - x.cos()).unwrap();
        assert!(r.linf_distance(&expected).unwrap() < 1e-12);
    }

    #[test]
    fn rhs_ch_dissipation_matches_fractional_laplacian() {
        let g = grid(64);
        let u = random_smooth(&g, 15, 3);
        let p = ModelParams::camassa_holm(0.2).with_dissipation(0.7, 1.3);
        let with = rhs_ch(&u, &p).unwrap();
        let without = rhs_ch(&u, &ModelParams::camassa_holm(0.2)).unwrap();
        let lam = fractional_laplacian(&u, 1.3).unwrap().scale(-0.7);
        assert!(with.sub(&without).unwrap().linf_distance(&lam).unwrap() < 1e-12);
    }

    #[test]
    fn equivalent_form_matches() {
        let g = grid(128);
        let mut worst: f64 = 0.0;
        for seed in 0..20 {
            let u = random_smooth(&g, 30, 100 + seed);
            for alpha in [0.0, 0.1, 0.5, 0.9] {
                let p = ModelParams::camassa_holm(alpha);
                let a = rhs_ch(&u, &p).unwrap();
                let b = rhs_equivalent_form(&u, &p).unwrap();
                worst = worst.max(a.linf_distance(&b).unwrap());
            }
        }
        assert!(worst < 1e-11, "{worst}");

        let u = random_smooth(&g, 30, 7);
        let eq = rhs_equivalent_form(&u, &ModelParams::camassa_holm(0.0)).unwrap();
        let b = rhs_burgers(&u, &ModelParams::burgers()).unwrap();
        assert_eq!(eq.samples(), b.samples());
    }

    #[test]
    fn equivalent_form_sine_sources() {
        // u² = ½ - ½cos 2x, uₓ² = ½ + ½cos 2x; ∂³ cos 2x = 8 sin 2x, ∂ cos 2x = -2 sin 2x.
        let g = grid(64);
        let alpha: f64 = 1.0;
        let a2 = alpha * alpha;
        let h2 = 1.0 / (1.0 + 4.0 * a2);
        let expected = Field::from_fn(&g, |x| {
            let s2 = (2.0 * x).sin();
            let transport = -1.5 * s2;
            let first = -a2 * h2 * (-0.5) * 8.0 * s2;
            let second = -0.5 * a2 * h2 * 0.5 * (-2.0) * s2;
            transport + first + second
        })
        .unwrap();
        let r = rhs_equivalent_form(&sin_field(&g), &ModelParams::camassa_holm(alpha)).unwrap();
        assert!(r.linf_distance(&expected).unwrap() < 1e-12);
    }

    #[test]
    fn source_term_examples() {
        let g = grid(64);
        let c = Field::from_fn(&g, |_| 3.0).unwrap();
        assert!(
            source_term_i(&c, &ModelParams::camassa_holm(0.4))
                .unwrap()
                .max_abs()
                < 1e-14
        );

        let u = sin_field(&g);
        let norm = |a: f64| {
            let i = source_term_i(&u, &ModelParams::camassa_holm(a)).unwrap();
            crate::lp::hs_norm_value(&i, 1.0).unwrap()
        };
        let mut a = 0.1;
        let mut last = 0.0;
        for _ in 0..5 {
            last = norm(a) / norm(a / 2.0);
            a /= 2.0;
        }
        assert!((last / 4.0 - 1.0).abs() < 0.01, "{last}");

        for seed in 0..5 {
            let u = random_smooth(&g, 15, seed);
            let p = ModelParams::camassa_holm(0.5);
            let eq = rhs_equivalent_form(&u, &p).unwrap();
            let transport = rhs_burgers(&u, &ModelParams::burgers()).unwrap();
            let i = source_term_i(&u, &p).unwrap();
            let diff = eq.sub(&transport).unwrap().add(&i).unwrap();
            assert!(diff.max_abs() < 1e-11);
        }
    }

    #[test]
    fn source_term_independent_of_rhs_pipeline() {
        let g = grid(128);
        let u = random_smooth(&g, 20, 9);
        let alpha = 0.3;
        let u_sq = u.zip_with(&u, |a, b| a * b).unwrap();
        let ux = derivative(&u, 1).unwrap();
        let inner = derivative(&u_sq, 2)
            .unwrap()
            .add(&ux.zip_with(&ux, |a, b| 0.5 * a * b).unwrap())
            .unwrap();
        let expected = derivative(&helmholtz_inverse(&inner, alpha).unwrap(), 1)
            .unwrap()
            .scale(alpha * alpha);
        let p = ModelParams {
            dealias: false,
            ..ModelParams::camassa_holm(alpha)
        };
        let i = source_term_i(&u, &p).unwrap();
        assert!(i.linf_distance(&expected).unwrap() < 1e-12);
    }

    #[test]
    fn cfl_examples() {
        let g = Grid::new(256, 2.0 * PI).unwrap();
        let c = StepControl {
            dt_max: 0.5,
            ..Default::default()
        };
        let p = ModelParams::burgers();
        assert_eq!(cfl_dt(&Field::zeros(&g), &c, &p), 0.5);

        let u = sin_field(&g);
        let d1 = cfl_dt(&u, &c, &p);
        let d2 = cfl_dt(&u.scale(2.0), &c, &p);
        assert!((d1 / d2 - 2.0).abs() < 1e-12);
        assert!((d1 - 0.3 * g.spacing() / 3.0).abs() < 1e-15);

        let explicit = StepControl {
            integrator: Integrator::Rk4,
            ..c.clone()
        };
        let visc = ModelParams::burgers().with_dissipation(1.0, 2.0);
        assert!(cfl_dt(&Field::zeros(&g), &explicit, &visc) <= 2.0 / (128.0 * 128.0));
        assert_eq!(cfl_dt(&Field::zeros(&g), &c, &visc), 0.5);
    }

    #[test]
    fn rk4_examples() {
        let g = grid(16);
        let u = sin_field(&g).with_time(0.3);
        let same = step_rk4(&u, 0.1, |f| Ok(Field::zeros(f.grid()))).unwrap();
        assert_eq!(same.samples(), u.samples());
        assert_eq!(same.time(), Some(0.4));

        let lambda = -1.3;
        let one = Field::from_fn(&g, |_| 1.0).unwrap();
        let mut errs = Vec::new();
        for dt in [0.1, 0.05] {
            let out = step_rk4(&one, dt, |f| Ok(f.scale(lambda))).unwrap();
            errs.push((out.samples()[0] - (lambda * dt).exp()).abs());
        }
        let order = (errs[0] / errs[1]).log2();
        assert!((order - 5.0).abs() < 0.1, "{order}");

        let bad = step_rk4(&one, 0.1, |f| Ok(f.map(|_| f64::NAN)));
        assert!(matches!(bad, Err(Error::Instability { .. })));
    }

    fn fixed_step(u0: &Field, p: &ModelParams, dt: f64, steps: usize, c: &StepControl) -> Field {
        let mut u = u0.clone();
        for _ in 0..steps {
            u = advance(&u, dt, p, c).unwrap();
        }
        u
    }

    #[test]
    fn rk4_self_convergence_on_burgers() {
        let g = grid(128);
        let u0 = sin_field(&g);
        let p = ModelParams::burgers();
        let c = StepControl::default();
        let run = |steps: usize| fixed_step(&u0, &p, 0.1 / steps as f64, steps, &c);
        let (a, b, r) = (run(20), run(40), run(80));
        let e1 = a.linf_distance(&b).unwrap();
        let e2 = b.linf_distance(&r).unwrap();
        let ratio = e1 / e2;
        assert!((ratio / 16.0 - 1.0).abs() < 0.1, "{ratio}");
    }

    #[test]
    fn integrating_factor_examples() {
        let g = grid(64);
        let u = random_smooth(&g, 20, 4);
        let (nu, gamma, dt) = (0.3, 1.5, 0.05);
        let p = ModelParams::burgers().with_dissipation(nu, gamma);
        let out = step_if_rk4_with(&u, dt, &p, |f| Ok(Field::zeros(f.grid()))).unwrap();
        let before = transform_forward(&u).unwrap();
        let after = transform_forward(&out).unwrap();
        for j in 0..g.n_points() {
            let factor = (-nu * fractional_symbol(g.frequency(j), gamma) * dt).exp();
            assert!((after.coeffs()[j] - before.coeffs()[j] * factor).norm() < 1e-15);
        }

        let p0 = ModelParams::camassa_holm(0.4);
        let rk = advance(&u, 0.01, &p0, &StepControl::default()).unwrap();
        let lawson = step_if_rk4(&u, 0.01, &p0).unwrap();
        assert!(rk.linf_distance(&lawson).unwrap() < 1e-13);
    }

    #[test]
    fn integrating_factor_agrees_with_explicit() {
        let g = grid(64);
        let u0 = sin_field(&g);
        let p = ModelParams::burgers().with_dissipation(0.1, 2.0);
        let explicit = StepControl {
            integrator: Integrator::Rk4,
            ..Default::default()
        };
        let lawson = StepControl {
            integrator: Integrator::IntegratingFactor,
            ..Default::default()
        };
        let a = fixed_step(&u0, &p, 1e-4, 1000, &explicit);
        let b = fixed_step(&u0, &p, 1e-4, 1000, &lawson);
        assert!(a.linf_distance(&b).unwrap() <= 1e-9);
    }

    #[test]
    fn frozen_sine_never_flags() {
        let g = grid(256);
        let c = StepControl::default();
        let records: Vec<Record> = (0..50)
            .map(|i| diagnose(&sin_field(&g), i as f64 * 0.1, 0.0, &c.norm_indices))
            .collect();
        assert_eq!(detect_breaking(&records, &c), RunStatus::Completed);
    }

    #[test]
    fn burgers_breaking_near_one_third() {
        let g = grid(256);
        let c = StepControl {
            t_end: 0.6,
            ..Default::default()
        };
        let traj = solve(&sin_field(&g), &ModelParams::burgers(), &c).unwrap();
        let t = traj.status.time().expect("breaking expected");
        assert!(matches!(traj.status, RunStatus::BreakingDetected { .. }));
        assert!((t * 3.0 - 1.0).abs() < 0.05, "{t}");
        assert_eq!(detect_breaking(&traj.records, &c), traj.status);
    }

    #[test]
    fn smooth_ch_run_completes() {
        let g = grid(256);
        let u0 = sin_field(&g).scale(0.2);
        let c = StepControl::default();
        let traj = solve(&u0, &ModelParams::camassa_holm(0.5), &c).unwrap();
        assert!(traj.status.is_completed());
        let norms = traj.norm_series(0);
        let max = norms.iter().cloned().fold(0.0, f64::max);
        assert!(max < 1.5 * norms[0]);
        assert!((traj.times().last().unwrap() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn zero_datum_stays_zero() {
        let g = grid(64);
        let traj = solve(
            &Field::zeros(&g),
            &ModelParams::camassa_holm(0.3),
            &StepControl::default(),
        )
        .unwrap();
        assert!(traj.status.is_completed());
        assert!(traj.fields().iter().all(|f| f.max_abs() == 0.0));
    }

    #[test]
    fn trajectory_invariants() {
        let g = grid(128);
        let c = StepControl {
            save_every: 7,
            ..Default::default()
        };
        let traj = solve(
            &random_smooth(&g, 10, 1).scale(0.3),
            &ModelParams::camassa_holm(0.2),
            &c,
        )
        .unwrap();
        let times = traj.times();
        assert_eq!(times[0], 0.0);
        assert!(times.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(times.len(), traj.fields().len());
        assert!(traj
            .records
            .iter()
            .all(|r| r.norms[0] <= c.norm_cap && r.min_slope > c.breaking_slope_threshold));
        for (f, t) in traj.fields().iter().zip(&times) {
            assert_eq!(f.time(), Some(*t));
        }
    }

    #[test]
    fn mean_conservation() {
        let g = grid(128);
        let u0 = random_smooth(&g, 12, 5).scale(0.4);
        let c = StepControl {
            t_end: 0.5,
            ..Default::default()
        };
        for p in [ModelParams::camassa_holm(0.3), ModelParams::burgers()] {
            let traj = solve(&u0, &p, &c).unwrap();
            let m0 = traj.records[0].mean * g.period();
            let drift = traj
                .records
                .iter()
                .map(|r| (r.mean * g.period() - m0).abs())
                .fold(0.0, f64::max);
            assert!(drift <= 1e-10 * 0.5, "{drift}");
        }
    }

    #[test]
    fn quadratic_invariants_conserved() {
        let g = grid(128);
        let u0 = random_smooth(&g, 8, 6).scale(0.05);
        let c = StepControl {
            t_end: 0.5,
            ..Default::default()
        };
        for p in [ModelParams::camassa_holm(0.5), ModelParams::burgers()] {
            let traj = solve(&u0, &p, &c).unwrap();
            assert!(traj.status.is_completed());
            let e = traj.energy_series();
            let drift = e.iter().map(|v| (v / e[0] - 1.0).abs()).fold(0.0, f64::max);
            assert!(drift <= 1e-8, "{drift}");
        }
    }

    #[test]
    fn solve_is_deterministic() {
        let g = grid(128);
        let u0 = random_smooth(&g, 10, 8).scale(0.5);
        let p = ModelParams::camassa_holm(0.1);
        let c = StepControl::default();
        let a = solve(&u0, &p, &c).unwrap();
        let b = solve(&u0, &p, &c).unwrap();
        assert_eq!(a.final_field().samples(), b.final_field().samples());
        assert_eq!(a.records, b.records);
    }

    #[test]
    fn ensemble_matches_and_shares_times() {
        let g = grid(128);
        let u0 = random_smooth(&g, 10, 2).scale(0.1);
        let members: Vec<(Field, ModelParams)> = [0.0, 0.1, 0.2]
            .iter()
            .map(|&a| (u0.clone(), ModelParams::camassa_holm(a)))
            .collect();
        let c = StepControl::default();
        let serial = solve_ensemble(&members, &c, 1).unwrap();
        let parallel = solve_ensemble(&members, &c, 3).unwrap();
        for (a, b) in serial.iter().zip(&parallel) {
            assert_eq!(a.final_field().samples(), b.final_field().samples());
            assert_eq!(a.times(), serial[0].times());
        }
        let other = Grid::new(64, 2.0 * PI).unwrap();
        let bad = vec![
            members[0].clone(),
            (Field::zeros(&other), ModelParams::burgers()),
        ];
        assert!(matches!(
            solve_ensemble(&bad, &c, 1),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(ModelParams::camassa_holm(-0.1).validate().is_err());
        assert!(ModelParams::burgers()
            .with_dissipation(-1.0, 2.0)
            .validate()
            .is_err());
        assert!(ModelParams::burgers()
            .with_dissipation(1.0, 2.5)
            .validate()
            .is_err());
        let bad = StepControl {
            cfl: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = StepControl {
            t_end: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
