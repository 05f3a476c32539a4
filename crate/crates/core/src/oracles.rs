//! Reference solutions that share no code path with the spectral solver:
//! inviscid Burgers by characteristics, the periodized peakon, a
//! finite-difference CH/Burgers integrator, and the quadratic CH energy.

use std::fmt;
use std::sync::Arc;

use crate::dynamics::{cfl_dt, Equation, ModelParams, StepControl};
use crate::error::{Error, Result};
use crate::spectral::{derivative, resample, transform_forward, Field, Grid, Spectrum};

/// Evaluation is refused from this fraction of the shock time onward.
pub const VALIDITY_FRACTION: f64 = 0.95;
const ROOT_TOL: f64 = 1e-13;
const MAX_NEWTON: usize = 100;
const SHOCK_REFINEMENT: usize = 16;
const ANALYTIC_SCAN: usize = 1 << 16;

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Profile {
    Analytic { u: ScalarFn, du: ScalarFn },
    Spectral(Spectrum),
}

impl Profile {
    fn value(&self, x: f64) -> f64 {
        match self {
            Profile::Analytic { u, .. } => u(x),
            Profile::Spectral(s) => s.evaluate(x),
        }
    }

    fn slope(&self, x: f64) -> f64 {
        match self {
            Profile::Analytic { du, .. } => du(x),
            Profile::Spectral(s) => s.evaluate_derivative(x, 1),
        }
    }
}

/// Exact pre-shock solution of `u_t + 3u uₓ = 0` with a periodic datum.
#[derive(Clone)]
pub struct CharacteristicSolution {
    profile: Profile,
    shock_time: f64,
    period: f64,
    amplitude: f64,
}

impl fmt::Debug for CharacteristicSolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CharacteristicSolution")
            .field("shock_time", &self.shock_time)
            .field("period", &self.period)
            .finish()
    }
}

impl CharacteristicSolution {
    /// Datum given by its trigonometric interpolant on the field's grid.
    pub fn from_field(u0: &Field) -> Result<Self> {
        let spectrum = transform_forward(u0)?;
        let amplitude = spectrum.coeffs().iter().map(|c| c.norm()).sum();
        Ok(CharacteristicSolution {
            shock_time: shock_time(u0)?,
            period: u0.grid().period(),
            amplitude,
            profile: Profile::Spectral(spectrum),
        })
    }

    /// Datum given in closed form together with its derivative. The shock time
    /// comes from a dense scan of `u₀'` refined by golden-section search.
    pub fn analytic(
        u0: impl Fn(f64) -> f64 + Send + Sync + 'static,
        du0: impl Fn(f64) -> f64 + Send + Sync + 'static,
        period: f64,
    ) -> Result<Self> {
        if !(period.is_finite() && period > 0.0) {
            return Err(Error::OutOfRange {
                what: "period",
                value: period,
                allowed: "(0, ∞)".into(),
            });
        }
        let h = period / ANALYTIC_SCAN as f64;
        let mut best = (f64::NEG_INFINITY, 0.0);
        let mut amplitude: f64 = 0.0;
        for j in 0..ANALYTIC_SCAN {
            let x = j as f64 * h;
            amplitude = amplitude.max(u0(x).abs());
            let v = -du0(x);
            if v > best.0 {
                best = (v, x);
            }
        }
        let (mut a, mut b) = (best.1 - h, best.1 + h);
        let ratio = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..80 {
            let m1 = b - ratio * (b - a);
            let m2 = a + ratio * (b - a);
            if -du0(m1) > -du0(m2) {
                b = m2;
            } else {
                a = m1;
            }
        }
        let steepest = (-du0(0.5 * (a + b))).max(best.0);
        Ok(CharacteristicSolution {
            profile: Profile::Analytic {
                u: Arc::new(u0),
                du: Arc::new(du0),
            },
            shock_time: time_from_steepness(steepest, amplitude),
            period,
            amplitude,
        })
    }

    pub fn shock_time(&self) -> f64 {
        self.shock_time
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn initial(&self, x: f64) -> f64 {
        self.profile.value(x)
    }

    /// `u(x, t)`, found by solving `x₀ + 3t u₀(x₀) = x (mod L)` with Newton's
    /// method safeguarded by bisection on a sign-changing bracket.
    pub fn evaluate(&self, x: f64, t: f64) -> Result<f64> {
        if !(t >= 0.0) || t >= VALIDITY_FRACTION * self.shock_time {
            return Err(Error::Refused(format!(
                "t = {t} is outside [0, {VALIDITY_FRACTION}·T*) with T* = {}",
                self.shock_time
            )));
        }
        let x = x.rem_euclid(self.period);
        if t == 0.0 {
            return Ok(self.profile.value(x));
        }
        let f = |x0: f64| x0 + 3.0 * t * self.profile.value(x0) - x;
        let reach = 3.0 * t * self.amplitude.max(f64::MIN_POSITIVE) * (1.0 + 1e-12) + 1e-12;
        let (mut lo, mut hi) = (x - reach, x + reach);
        let mut widen = 0;
        while !(f(lo) <= 0.0 && f(hi) >= 0.0) {
            widen += 1;
            if widen > 60 {
                return Err(Error::RootFind(format!("no bracket for x = {x}, t = {t}")));
            }
            lo -= reach;
            hi += reach;
        }
        let mut x0 = x - 3.0 * t * self.profile.value(x);
        if !(x0 > lo && x0 < hi) {
            x0 = 0.5 * (lo + hi);
        }
        for _ in 0..MAX_NEWTON {
            let fx = f(x0);
            if fx == 0.0 {
                return Ok(self.profile.value(x0));
            }
            if fx < 0.0 {
                lo = x0;
            } else {
                hi = x0;
            }
            let slope = 1.0 + 3.0 * t * self.profile.slope(x0);
            let mut next = x0 - fx / slope;
            if !(next > lo && next < hi) || !next.is_finite() {
                next = 0.5 * (lo + hi);
            }
            let step = (next - x0).abs();
            x0 = next;
            if step <= ROOT_TOL * x.abs().max(1.0) || hi - lo <= ROOT_TOL {
                return Ok(self.profile.value(x0));
            }
        }
        Err(Error::RootFind(format!(
            "no convergence after {MAX_NEWTON} iterations at x = {x}, t = {t}"
        )))
    }

    /// The solution sampled on `grid` at time `t`.
    pub fn field(&self, grid: &Grid, t: f64) -> Result<Field> {
        let samples = grid
            .nodes()
            .into_iter()
            .map(|x| self.evaluate(x, t))
            .collect::<Result<Vec<_>>>()?;
        Ok(Field::new(grid, samples)?.with_time(t).with_alpha(0.0))
    }
}

pub fn burgers_characteristics(sol: &CharacteristicSolution, x: f64, t: f64) -> Result<f64> {
    sol.evaluate(x, t)
}

fn time_from_steepness(steepest: f64, scale: f64) -> f64 {
    if steepest <= 1e-12 * scale.max(1.0) {
        f64::INFINITY
    } else {
        1.0 / (3.0 * steepest)
    }
}

/// `T* = 1/(3 max(-u₀'))`, with `u₀'` interpolated onto a 16× finer grid and
/// the maximum refined by a parabola through the best node and its neighbours.
pub fn shock_time(u0: &Field) -> Result<f64> {
    let fine = u0.grid().refined(SHOCK_REFINEMENT)?;
    let slope = resample(&derivative(u0, 1)?, &fine)?;
    let s = slope.samples();
    let n = s.len();
    let (j, &min) = s
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty grid");
    let (l, r) = (s[(j + n - 1) % n], s[(j + 1) % n]);
    let curvature = l - 2.0 * min + r;
    let refined = if curvature > 0.0 {
        min - (r - l).powi(2) / (8.0 * curvature)
    } else {
        min
    };
    Ok(time_from_steepness(-refined, u0.max_abs()))
}

/// Image-sum periodized peakon `Σ_m c·e^{-|x - ct + mL|/α}` sampled on `grid`.
pub fn peakon_field(c: f64, alpha: f64, t: f64, grid: &Grid) -> Result<Field> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::OutOfRange {
            what: "alpha",
            value: alpha,
            allowed: "(0, ∞)".into(),
        });
    }
    let period = grid.period();
    let images = ((-(1e-16f64).ln() * alpha / period).ceil() as usize).min(100_000);
    let samples = grid
        .nodes()
        .into_iter()
        .map(|x| {
            let y = (x - c * t + 0.5 * period).rem_euclid(period) - 0.5 * period;
            let mut acc = (-y.abs() / alpha).exp();
            for m in 1..=images {
                let shift = m as f64 * period;
                acc += (-(y + shift).abs() / alpha).exp() + (-(y - shift).abs() / alpha).exp();
            }
            c * acc
        })
        .collect();
    Ok(Field::new(grid, samples)?.with_time(t).with_alpha(alpha))
}

/// Exact `∫₀ᴸ u² + uₓ²` of the periodized peakon, from its closed form
/// `u = c·cosh((x - L/2)/α)/sinh(L/(2α))` on one period.
pub fn peakon_h1_norm_sq(c: f64, alpha: f64, period: f64) -> f64 {
    let a = 0.5 * period;
    let s = (a / alpha).sinh();
    let a_over_s2 = a / (s * s);
    let coth = 1.0 / (a / alpha).tanh();
    let values = a_over_s2 + alpha * coth;
    let slopes = (-a_over_s2 + alpha * coth) / (alpha * alpha);
    c * c * (values + slopes)
}

/// `∫u² + α²(∂ₓu)²` computed as `L Σ (1 + α²ξ_k²)|c_k|²`.
pub fn energy_ch(u: &Field, alpha: f64) -> f64 {
    match transform_forward(u) {
        Ok(s) => s.weighted_norm_sq(|xi| 1.0 + alpha * alpha * xi * xi),
        Err(_) => f64::NAN,
    }
}

/// Solves `(1 + 2r)v_j - r(v_{j-1} + v_{j+1}) = f_j` on a ring: Thomas
/// algorithm plus a Sherman–Morrison correction for the corner entries.
fn cyclic_helmholtz(f: &[f64], r: f64) -> Vec<f64> {
    let n = f.len();
    let (a, b, c) = (-r, 1.0 + 2.0 * r, -r);
    if r == 0.0 {
        return f.to_vec();
    }
    let gamma = -b;
    let mut diag = vec![b; n];
    diag[0] = b - gamma;
    diag[n - 1] = b - a * c / gamma;

    let thomas = |rhs: &[f64]| -> Vec<f64> {
        let mut cp = vec![0.0; n];
        let mut dp = vec![0.0; n];
        cp[0] = c / diag[0];
        dp[0] = rhs[0] / diag[0];
        for i in 1..n {
            let m = diag[i] - a * cp[i - 1];
            cp[i] = c / m;
            dp[i] = (rhs[i] - a * dp[i - 1]) / m;
        }
        let mut x = vec![0.0; n];
        x[n - 1] = dp[n - 1];
        for i in (0..n - 1).rev() {
            x[i] = dp[i] - cp[i] * x[i + 1];
        }
        x
    };

    let y = thomas(f);
    let mut uvec = vec![0.0; n];
    uvec[0] = gamma;
    uvec[n - 1] = a;
    let z = thomas(&uvec);
    let factor = (y[0] + c * y[n - 1] / gamma) / (1.0 + z[0] + c * z[n - 1] / gamma);
    y.iter().zip(&z).map(|(yi, zi)| yi - factor * zi).collect()
}

struct FiniteDifference {
    h: f64,
    alpha: f64,
    nu: f64,
    burgers: bool,
}

impl FiniteDifference {
    fn d1(&self, u: &[f64]) -> Vec<f64> {
        let n = u.len();
        (0..n)
            .map(|j| (u[(j + 1) % n] - u[(j + n - 1) % n]) / (2.0 * self.h))
            .collect()
    }

    fn d2(&self, u: &[f64]) -> Vec<f64> {
        let n = u.len();
        (0..n)
            .map(|j| (u[(j + 1) % n] - 2.0 * u[j] + u[(j + n - 1) % n]) / (self.h * self.h))
            .collect()
    }

    fn rhs(&self, u: &[f64]) -> Vec<f64> {
        let ux = self.d1(u);
        let mut out: Vec<f64> = if self.burgers {
            u.iter().zip(&ux).map(|(a, b)| -3.0 * a * b).collect()
        } else {
            let a2 = self.alpha * self.alpha;
            let q: Vec<f64> = u
                .iter()
                .zip(&ux)
                .map(|(a, b)| a * a + 0.5 * a2 * b * b)
                .collect();
            let pressure = self.d1(&cyclic_helmholtz(&q, a2 / (self.h * self.h)));
            (0..u.len()).map(|j| -u[j] * ux[j] - pressure[j]).collect()
        };
        if self.nu > 0.0 {
            for (o, v) in out.iter_mut().zip(self.d2(u)) {
                *o += self.nu * v;
            }
        }
        out
    }
}

/// Finite-difference reference solution: second-order central differences, a
/// direct cyclic tridiagonal solve for `(1 - α²∂ₓ²)^{-1}`, classical RK4, on a
/// grid 4× finer with a step 10× below the spectral CFL step for `u0`.
/// Dissipation is supported for `ν = 0` or `γ = 2`.
pub fn fd_reference(u0: &Field, p: &ModelParams, t_end: f64) -> Result<Field> {
    p.validate()?;
    if !(t_end.is_finite() && t_end >= 0.0) {
        return Err(Error::OutOfRange {
            what: "t_end",
            value: t_end,
            allowed: "[0, ∞)".into(),
        });
    }
    if p.nu > 0.0 && p.gamma != 2.0 {
        return Err(Error::InvalidArgument(
            "finite-difference reference supports dissipation only for gamma = 2".into(),
        ));
    }
    let coarse = u0.grid();
    let fine = coarse.refined(4)?;
    let scheme = FiniteDifference {
        h: fine.spacing(),
        alpha: p.effective_alpha(),
        nu: p.nu,
        burgers: p.equation == Equation::Burgers,
    };
    let mut u = resample(u0, &fine)?.into_samples();

    let control = StepControl {
        t_end: t_end.max(f64::MIN_POSITIVE),
        integrator: crate::dynamics::Integrator::Rk4,
        ..Default::default()
    };
    let mut dt = cfl_dt(u0, &control, p) / 10.0;
    if scheme.nu > 0.0 {
        dt = dt.min(0.5 * scheme.h * scheme.h / scheme.nu);
    }
    let steps = if t_end == 0.0 {
        0
    } else {
        (t_end / dt).ceil() as usize
    };
    let dt = if steps == 0 {
        0.0
    } else {
        t_end / steps as f64
    };

    let axpy = |a: f64, x: &[f64], y: &[f64]| -> Vec<f64> {
        x.iter().zip(y).map(|(xv, yv)| yv + a * xv).collect()
    };
    for step in 0..steps {
        let k1 = scheme.rhs(&u);
        let k2 = scheme.rhs(&axpy(0.5 * dt, &k1, &u));
        let k3 = scheme.rhs(&axpy(0.5 * dt, &k2, &u));
        let k4 = scheme.rhs(&axpy(dt, &k3, &u));
        for j in 0..u.len() {
            u[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        let time = (step + 1) as f64 * dt;
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::Instability {
                time,
                detail: "finite-difference reference produced non-finite values".into(),
            });
        }
        let steepest = scheme.d1(&u).into_iter().fold(f64::INFINITY, f64::min);
        if steepest < control.breaking_slope_threshold {
            return Err(Error::Instability {
                time,
                detail: format!("finite-difference reference reached slope {steepest:e}"),
            });
        }
    }
    let samples: Vec<f64> = u.iter().step_by(4).cloned().collect();
    Ok(Field::new(coarse, samples)?
        .with_time(t_end)
        .with_alpha(p.effective_alpha()))
}
