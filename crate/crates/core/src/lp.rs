//! Sobolev norms, Littlewood–Paley blocks, the low-frequency cutoff `S_n`, and
//! numerical probes of the product, commutator, interpolation and Bernstein
//! inequalities.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{
    derivative, js_operator, transform_forward, transform_inverse, Field, Grid, Spectrum,
};

/// `h(t) = e^{-1/t}` for `t > 0`, else 0.
fn bump_edge(t: f64) -> f64 {
    if t > 0.0 {
        (-1.0 / t).exp()
    } else {
        0.0
    }
}

/// C^∞ transition from 0 (t ≤ 0) to 1 (t ≥ 1).
pub fn smooth_step(t: f64) -> f64 {
    let a = bump_edge(t);
    let b = bump_edge(1.0 - t);
    if a + b == 0.0 {
        return if t >= 1.0 { 1.0 } else { 0.0 };
    }
    a / (a + b)
}

/// Low-pass profile: 1 on `|ξ| ≤ 1`, 0 on `|ξ| ≥ 4/3`.
pub fn chi(xi: f64) -> f64 {
    let r = xi.abs();
    if r <= 1.0 {
        1.0
    } else if r >= 4.0 / 3.0 {
        0.0
    } else {
        1.0 - smooth_step((r - 1.0) * 3.0)
    }
}

/// Annulus profile `φ(ξ) = χ(ξ/2) - χ(ξ)`.
pub fn phi(xi: f64) -> f64 {
    chi(xi / 2.0) - chi(xi)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CutoffMode {
    Smooth,
    #[default]
    Sharp,
}

impl std::str::FromStr for CutoffMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smooth" => Ok(CutoffMode::Smooth),
            "sharp" => Ok(CutoffMode::Sharp),
            other => Err(Error::InvalidArgument(format!(
                "cutoff mode must be smooth or sharp, got `{other}`"
            ))),
        }
    }
}

/// Dyadic partition `{χ, φ(2^{-q}·)}` restricted to one grid.
#[derive(Clone, Debug)]
pub struct DyadicPartition {
    grid: Grid,
    q_max: i32,
}

impl DyadicPartition {
    pub fn new(grid: &Grid) -> Self {
        // smallest q with 2^{q+1} ≥ ξ_max, so χ(2^{-(q_max+1)}ξ) = 1 on the whole grid
        let xi_max = grid.max_frequency();
        let mut q = -1;
        while 2f64.powi(q + 1) < xi_max {
            q += 1;
        }
        DyadicPartition {
            grid: grid.clone(),
            q_max: q,
        }
    }

    pub fn q_max(&self) -> i32 {
        self.q_max
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Multiplier of `Δ_q` at frequency `ξ`.
    pub fn block_symbol(q: i32, xi: f64) -> f64 {
        if q == -1 {
            chi(xi)
        } else {
            phi(xi / 2f64.powi(q))
        }
    }

    fn check_block(&self, q: i32) -> Result<()> {
        if q < -1 || q > self.q_max {
            return Err(Error::OutOfRange {
                what: "block index q",
                value: q as f64,
                allowed: format!("[-1, {}]", self.q_max),
            });
        }
        Ok(())
    }

    /// Largest deviation of `Σ_q` block symbols from 1 over the grid.
    pub fn unity_deviation(&self) -> f64 {
        self.grid
            .frequencies()
            .into_iter()
            .map(|xi| {
                let total: f64 = (-1..=self.q_max).map(|q| Self::block_symbol(q, xi)).sum();
                (total - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// `‖f‖_{H^s}` together with the per-block `L²` norms `‖Δ_q f‖`, `q = -1..q_max`.
#[derive(Clone, Debug, Serialize)]
pub struct NormReport {
    pub s: f64,
    pub value: f64,
    pub tail_profile: Vec<f64>,
}

/// `L Σ_k (1+ξ_k²)^s |c_k|²`.
pub fn hs_norm_sq_spectrum(spec: &Spectrum, s: f64) -> f64 {
    spec.weighted_norm_sq(|xi| (1.0 + xi * xi).powf(s))
}

pub fn hs_norm_value(f: &Field, s: f64) -> Result<f64> {
    Ok(hs_norm_sq_spectrum(&transform_forward(f)?, s).sqrt())
}

pub fn hs_norm(f: &Field, s: f64) -> Result<NormReport> {
    let spec = transform_forward(f)?;
    let partition = DyadicPartition::new(f.grid());
    let tail_profile = (-1..=partition.q_max)
        .map(|q| {
            spec.weighted_norm_sq(|xi| DyadicPartition::block_symbol(q, xi).powi(2))
                .sqrt()
        })
        .collect();
    Ok(NormReport {
        s,
        value: hs_norm_sq_spectrum(&spec, s).sqrt(),
        tail_profile,
    })
}

fn real_multiplier(f: &Field, symbol: impl Fn(f64) -> f64) -> Result<Field> {
    let mut spec = transform_forward(f)?;
    let grid = f.grid().clone();
    for (j, c) in spec.coeffs_mut().iter_mut().enumerate() {
        *c *= symbol(grid.frequency(j));
    }
    transform_inverse(&spec)
}

/// `Δ_q f`.
pub fn lp_block(f: &Field, q: i32) -> Result<Field> {
    DyadicPartition::new(f.grid()).check_block(q)?;
    real_multiplier(f, |xi| DyadicPartition::block_symbol(q, xi))
}

/// Sharp cutoff band edge: modes with `|ξ| ≥ 2^{n-1}·4/3` are removed.
pub fn sharp_edge(n: u32) -> f64 {
    2f64.powi(n as i32 - 1) * 4.0 / 3.0
}

/// Multiplier of `S_n` at `ξ`.
pub fn low_cutoff_symbol(n: u32, mode: CutoffMode, xi: f64) -> f64 {
    match mode {
        CutoffMode::Smooth => (-1..n as i32)
            .map(|q| DyadicPartition::block_symbol(q, xi))
            .sum(),
        CutoffMode::Sharp => {
            if xi.abs() < sharp_edge(n) {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// `S_n f`. The smooth mode sums `Δ_{-1..n-1}` (equal to `χ(2^{-n}ξ)`); the
/// sharp mode is a projection onto `|ξ| < 2^{n-1}·4/3`.
pub fn low_cutoff(f: &Field, n: u32, mode: CutoffMode) -> Result<Field> {
    real_multiplier(f, |xi| low_cutoff_symbol(n, mode, xi))
}

/// `(Id - S_n) f`.
pub fn high_pass(f: &Field, n: u32, mode: CutoffMode) -> Result<Field> {
    real_multiplier(f, |xi| 1.0 - low_cutoff_symbol(n, mode, xi))
}

/// Product spectrum by explicit cyclic convolution of coefficients.
pub fn product_spectrum_by_convolution(u: &Spectrum, v: &Spectrum) -> Result<Spectrum> {
    if u.grid() != v.grid() {
        return Err(Error::GridMismatch("product operands".into()));
    }
    let n = u.grid().n_points();
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    for (a, ca) in u.coeffs().iter().enumerate() {
        if ca.norm_sqr() == 0.0 {
            continue;
        }
        for (b, cb) in v.coeffs().iter().enumerate() {
            out[(a + b) % n] += ca * cb;
        }
    }
    Spectrum::from_coeffs(u.grid(), out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProductRoute {
    Pointwise,
    Convolution,
}

/// `‖uv‖_{H^s} / (‖u‖_{H^s} ‖v‖_{H^s})`, `s > 1/2`.
pub fn product_probe(u: &Field, v: &Field, s: f64) -> Result<f64> {
    product_probe_with(u, v, s, ProductRoute::Pointwise)
}

pub fn product_probe_with(u: &Field, v: &Field, s: f64, route: ProductRoute) -> Result<f64> {
    if s <= 0.5 {
        return Err(Error::OutOfRange {
            what: "s",
            value: s,
            allowed: "(1/2, ∞)".into(),
        });
    }
    let su = transform_forward(u)?;
    let sv = transform_forward(v)?;
    let denom = hs_norm_sq_spectrum(&su, s).sqrt() * hs_norm_sq_spectrum(&sv, s).sqrt();
    if denom == 0.0 {
        return Err(Error::UndefinedRatio(
            "zero factor norm in product probe".into(),
        ));
    }
    let product = match route {
        ProductRoute::Pointwise => transform_forward(&u.zip_with(v, |a, b| a * b)?)?,
        ProductRoute::Convolution => product_spectrum_by_convolution(&su, &sv)?,
    };
    Ok(hs_norm_sq_spectrum(&product, s).sqrt() / denom)
}

/// `‖J^s(fg) - f J^s g‖_{L²}` over
/// `‖∂ₓf‖_{L∞}‖g‖_{H^{s-1}} + ‖f‖_{H^s}‖g‖_{L∞}`.
pub fn commutator_probe(f: &Field, g: &Field, s: f64) -> Result<f64> {
    if !(s >= 0.0) {
        return Err(Error::OutOfRange {
            what: "s",
            value: s,
            allowed: "[0, ∞)".into(),
        });
    }
    let fg = f.zip_with(g, |a, b| a * b)?;
    let commutator = js_operator(&fg, s)?.sub(&f.zip_with(&js_operator(g, s)?, |a, b| a * b)?)?;
    let denom = derivative(f, 1)?.max_abs() * hs_norm_value(g, s - 1.0)?
        + hs_norm_value(f, s)? * g.max_abs();
    if denom == 0.0 {
        return Err(Error::UndefinedRatio(
            "zero right-hand side in commutator probe".into(),
        ));
    }
    Ok(commutator.l2_norm() / denom)
}

/// `‖f‖_{H^{s-1}}^{1/2}‖f‖_{H^{s+1}}^{1/2} - ‖f‖_{H^s}`; never below round-off.
pub fn interpolation_check(f: &Field, s: f64) -> Result<f64> {
    let spec = transform_forward(f)?;
    Ok(interpolation_deficit(&spec, s))
}

pub fn interpolation_deficit(spec: &Spectrum, s: f64) -> f64 {
    let lo = hs_norm_sq_spectrum(spec, s - 1.0).sqrt();
    let hi = hs_norm_sq_spectrum(spec, s + 1.0).sqrt();
    let mid = hs_norm_sq_spectrum(spec, s).sqrt();
    (lo * hi).sqrt() - mid
}

/// `‖S_n f‖_{H^{s+k}} / (2^{kn} ‖f‖_{H^s})`.
pub fn bernstein_probe(f: &Field, n: u32, k: f64, s: f64, mode: CutoffMode) -> Result<f64> {
    let denom = 2f64.powf(k * n as f64) * hs_norm_value(f, s)?;
    if denom == 0.0 {
        return Err(Error::UndefinedRatio(
            "zero field in Bernstein probe".into(),
        ));
    }
    Ok(hs_norm_value(&low_cutoff(f, n, mode)?, s + k)? / denom)
}

/// Seeded rough data: `|c_k| = (1+|ξ_k|)^{-(s+0.6)}` with uniform random phases
/// for `k ≠ 0`, Hermitian-completed; `c_0 = 1` and the Nyquist mode is zero.
/// Lies in `H^s` and in no `H^{s+0.1}`.
pub fn rough_spectrum(grid: &Grid, s: f64, seed: u64) -> Spectrum {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = grid.n_points();
    let mut spec = Spectrum::zeros(grid);
    let coeffs = spec.coeffs_mut();
    coeffs[0] = Complex64::new(1.0, 0.0);
    for j in 1..n / 2 {
        let xi = grid.frequency(j);
        let amp = (1.0 + xi.abs()).powf(-(s + 0.6));
        let phase: f64 = rng.gen_range(0.0..2.0 * PI);
        let c = Complex64::from_polar(amp, phase);
        coeffs[j] = c;
        coeffs[n - j] = c.conj();
    }
    spec
}

pub fn rough_field(grid: &Grid, s: f64, seed: u64) -> Result<Field> {
    transform_inverse(&rough_spectrum(grid, s, seed))
}

/// Summary of an inequality probe over a random corpus.
#[derive(Clone, Debug, Serialize)]
pub struct CorpusMax {
    pub n_points: usize,
    pub samples: usize,
    pub max_ratio: f64,
}

/// Largest product-probe ratio over `count` rough pairs.
pub fn product_corpus_max(grid: &Grid, s: f64, count: usize, seed: u64) -> Result<CorpusMax> {
    corpus_max(grid, s, count, seed, |u, v| product_probe(u, v, s))
}

/// Largest commutator-probe ratio over `count` rough pairs.
pub fn commutator_corpus_max(grid: &Grid, s: f64, count: usize, seed: u64) -> Result<CorpusMax> {
    corpus_max(grid, s, count, seed, |u, v| commutator_probe(u, v, s))
}

fn corpus_max(
    grid: &Grid,
    s: f64,
    count: usize,
    seed: u64,
    probe: impl Fn(&Field, &Field) -> Result<f64>,
) -> Result<CorpusMax> {
    let mut max_ratio: f64 = 0.0;
    for i in 0..count as u64 {
        let u = rough_field(grid, s, seed.wrapping_add(2 * i))?.map(|v| v + 0.5);
        let v = rough_field(grid, s, seed.wrapping_add(2 * i + 1))?;
        max_ratio = max_ratio.max(probe(&u, &v)?);
    }
    Ok(CorpusMax {
        n_points: grid.n_points(),
        samples: count,
        max_ratio,
    })
}
