//! Zero-filter study harness: initial data, lockstep sweeps over `(α, n)`,
//! the Bona–Smith three-term decomposition, Step 2 / Step 3 scaling probes,
//! the convergence measurement and least-squares scaling fits.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dynamics::{solve_ensemble, ModelParams, Record, StepControl, Trajectory};
use crate::error::{Error, Result};
use crate::lp::{hs_norm_sq_spectrum, low_cutoff, rough_spectrum, sharp_edge, CutoffMode};
use crate::oracles::peakon_field;
use crate::spectral::{transform_forward, transform_inverse, Field, Grid};

/// Named initial data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialDatum {
    /// `sin x + 0.5 cos 2x`.
    BandLimited,
    /// `sin x`.
    Sine,
    Zero,
    /// Synthetic `H^s` datum, normalized to `‖u₀‖_{H^s} = 1`.
    Rough {
        s: f64,
        seed: u64,
    },
    /// Periodized peakon with spectrum damped by `e^{-(ξ/ξ_c)²}`; `ξ_c`
    /// defaults to a quarter of the grid's largest frequency.
    PeakonSmoothed {
        c: f64,
        alpha: f64,
        xi_c: Option<f64>,
    },
}

impl InitialDatum {
    /// Finitely many modes, so `S_n u₀ = u₀` once `n` is large.
    pub fn is_band_limited(&self) -> bool {
        matches!(
            self,
            InitialDatum::BandLimited | InitialDatum::Sine | InitialDatum::Zero
        )
    }
}

impl fmt::Display for InitialDatum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitialDatum::BandLimited => write!(f, "band_limited"),
            InitialDatum::Sine => write!(f, "sine"),
            InitialDatum::Zero => write!(f, "zero"),
            InitialDatum::Rough { s, seed } => write!(f, "rough:s={s},seed={seed}"),
            InitialDatum::PeakonSmoothed { c, alpha, xi_c } => {
                write!(f, "peakon:c={c},alpha={alpha}")?;
                if let Some(x) = xi_c {
                    write!(f, ",xi_c={x}")?;
                }
                Ok(())
            }
        }
    }
}

impl FromStr for InitialDatum {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let text = text.trim();
        let (name, args) = match text.split_once(':') {
            Some((n, a)) => (n.trim(), a.trim()),
            None => (text, ""),
        };
        let mut pairs = Vec::new();
        for part in args.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value in `{part}`")))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let take = |key: &str| pairs.iter().find(|(k, _)| k == key).map(|(_, v)| v.clone());
        let number = |key: &str| -> Result<Option<f64>> {
            take(key)
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|_| Error::Config(format!("`{key}` must be a number, got `{v}`")))
                })
                .transpose()
        };
        let allowed: &[&str] = match name {
            "band_limited" | "sine" | "zero" => &[],
            "rough" => &["s", "seed"],
            "peakon" => &["c", "alpha", "xi_c"],
            other => return Err(Error::Config(format!("unknown initial datum `{other}`"))),
        };
        if let Some((k, _)) = pairs.iter().find(|(k, _)| !allowed.contains(&k.as_str())) {
            return Err(Error::Config(format!(
                "unknown parameter `{k}` for datum `{name}`"
            )));
        }
        Ok(match name {
            "band_limited" => InitialDatum::BandLimited,
            "sine" => InitialDatum::Sine,
            "zero" => InitialDatum::Zero,
            "rough" => InitialDatum::Rough {
                s: number("s")?.unwrap_or(2.0),
                seed: match take("seed") {
                    Some(v) => v.parse().map_err(|_| {
                        Error::Config(format!("`seed` must be an unsigned integer, got `{v}`"))
                    })?,
                    None => 0,
                },
            },
            _ => InitialDatum::PeakonSmoothed {
                c: number("c")?.unwrap_or(1.0),
                alpha: number("alpha")?.unwrap_or(1.0),
                xi_c: number("xi_c")?,
            },
        })
    }
}

fn integer_mode(grid: &Grid, k: f64) -> Result<()> {
    // ξ = k must sit on the frequency ladder ξ = 2πm/L, |m| < N/2
    let m = k * grid.period() / (2.0 * PI);
    if (m - m.round()).abs() > 1e-9 || m.round() as usize >= grid.n_points() / 2 {
        return Err(Error::Config(format!(
            "frequency {k} is not resolved on a grid with N = {}, L = {}",
            grid.n_points(),
            grid.period()
        )));
    }
    Ok(())
}

pub fn synth_initial(datum: &InitialDatum, grid: &Grid) -> Result<Field> {
    match datum {
        InitialDatum::BandLimited => {
            integer_mode(grid, 2.0)?;
            Field::from_fn(grid, |x| x.sin() + 0.5 * (2.0 * x).cos())
        }
        InitialDatum::Sine => {
            integer_mode(grid, 1.0)?;
            Field::from_fn(grid, f64::sin)
        }
        InitialDatum::Zero => Ok(Field::zeros(grid)),
        InitialDatum::Rough { s, seed } => {
            if !s.is_finite() {
                return Err(Error::Config(format!(
                    "rough datum index s = {s} is not finite"
                )));
            }
            let spec = rough_spectrum(grid, *s, *seed);
            let norm = hs_norm_sq_spectrum(&spec, *s).sqrt();
            let scaled: Vec<_> = spec.coeffs().iter().map(|c| c / norm).collect();
            transform_inverse(&crate::spectral::Spectrum::from_coeffs(grid, scaled)?)
        }
        InitialDatum::PeakonSmoothed { c, alpha, xi_c } => {
            let xi_c = xi_c.unwrap_or(grid.max_frequency() / 4.0);
            if !(xi_c > 0.0 && alpha.is_finite() && *alpha > 0.0) {
                return Err(Error::Config(format!(
                    "peakon datum needs alpha > 0 and xi_c > 0 (alpha = {alpha}, xi_c = {xi_c})"
                )));
            }
            if grid.spacing() / alpha >= PI {
                return Err(Error::Config(format!(
                    "peakon width {alpha} is not resolved by spacing {}",
                    grid.spacing()
                )));
            }
            let raw = peakon_field(*c, *alpha, 0.0, grid)?;
            let mut spec = transform_forward(&raw)?;
            for (j, v) in spec.coeffs_mut().iter_mut().enumerate() {
                let r = grid.frequency(j) / xi_c;
                *v *= (-r * r).exp();
            }
            transform_inverse(&spec)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub datum: InitialDatum,
    /// Sobolev index of the study.
    pub s: f64,
    pub alphas: Vec<f64>,
    pub ns: Vec<u32>,
    pub n_points: usize,
    pub period: f64,
    pub control: StepControl,
    pub cutoff: CutoffMode,
    /// Threads used to advance ensemble members (`1` = inline).
    pub jobs: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            datum: InitialDatum::BandLimited,
            s: 2.0,
            alphas: vec![0.2, 0.1, 0.05, 0.025, 0.0125],
            ns: vec![2, 3, 4, 5, 6],
            n_points: 256,
            period: 2.0 * PI,
            control: StepControl::default(),
            cutoff: CutoffMode::Sharp,
            jobs: 1,
        }
    }
}

impl SweepConfig {
    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.n_points, self.period)
    }

    /// Index and grid-list constraints that do not depend on the grid.
    pub fn validate_lists(&self) -> Result<()> {
        if !(self.s > 1.5) {
            return Err(Error::Config(format!(
                "sobolev index s = {} must exceed 3/2",
                self.s
            )));
        }
        if self.alphas.is_empty() {
            return Err(Error::Config("alpha grid is empty".into()));
        }
        if let Some(a) = self.alphas.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
            return Err(Error::Config(format!("alpha = {a} must lie in (0, 1)")));
        }
        if self.alphas.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Config(
                "alpha grid must be strictly decreasing".into(),
            ));
        }
        if self.ns.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(
                "cutoff indices must be strictly increasing".into(),
            ));
        }
        Ok(())
    }

    /// Grid-independent checks plus resolvability of every cutoff on the grid.
    pub fn validate(&self) -> Result<()> {
        self.validate_lists()?;
        let grid = self.grid()?;
        if let Some(n) = self
            .ns
            .iter()
            .find(|&&n| sharp_edge(n) > grid.max_frequency())
        {
            return Err(Error::Config(format!(
                "cutoff index n = {n} (band edge {}) exceeds the largest grid frequency {}",
                sharp_edge(*n),
                grid.max_frequency()
            )));
        }
        if self.jobs > 1024 {
            return Err(Error::Config(format!(
                "jobs = {} is unreasonable",
                self.jobs
            )));
        }
        self.control.validate()
    }

    fn indices(&self) -> [f64; 3] {
        [self.s - 1.0, self.s, self.s + 1.0]
    }

    fn run_control(&self) -> StepControl {
        StepControl {
            norm_indices: vec![self.s, self.s - 1.0, self.s + 1.0],
            ..self.control.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictStatus {
    Pass,
    Fail,
    Inconclusive,
    NotApplicable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub status: VerdictStatus,
    pub detail: String,
}

impl Verdict {
    fn check(name: &str, passed: bool, detail: String) -> Self {
        Verdict {
            name: name.into(),
            status: if passed {
                VerdictStatus::Pass
            } else {
                VerdictStatus::Fail
            },
            detail,
        }
    }

    fn with_status(name: &str, status: VerdictStatus, detail: String) -> Self {
        Verdict {
            name: name.into(),
            status,
            detail,
        }
    }

    pub fn failed(&self) -> bool {
        self.status == VerdictStatus::Fail
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitModel {
    Alpha,
    N,
    Both,
}

/// Least-squares fit of `log e ≈ log C + p_α log α + p_n n log 2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub p_alpha: Option<f64>,
    pub p_n: Option<f64>,
    pub prefactor: f64,
    /// `max_i e_i / (α_i^{p_α} 2^{p_n n_i})`.
    pub implied_constant: f64,
    pub r_squared: f64,
    pub residual_max: f64,
    pub points: usize,
}

fn solve_small(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let m = b.len();
    let scale = a
        .iter()
        .flatten()
        .fold(0.0_f64, |s, v| s.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    for col in 0..m {
        let pivot = (col..m)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty");
        if a[pivot][col].abs() <= 1e-12 * scale {
            return Err(Error::Fit("rank-deficient design".into()));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        let pivot_row = a[col].clone();
        for row in col + 1..m {
            let f = a[row][col] / pivot_row[col];
            for (ak, pk) in a[row][col..].iter_mut().zip(&pivot_row[col..]) {
                *ak -= f * pk;
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; m];
    for row in (0..m).rev() {
        let tail: f64 = (row + 1..m).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    Ok(x)
}

/// Ordinary least squares on logarithms via the normal equations. Points are
/// `(error, α, n)`; at least four are required and every error must be positive.
pub fn fit_scaling(points: &[(f64, f64, u32)], model: FitModel) -> Result<FitResult> {
    if points.len() < 4 {
        return Err(Error::Fit(format!(
            "need at least 4 points, got {}",
            points.len()
        )));
    }
    if let Some(p) = points
        .iter()
        .find(|p| !(p.0 > 0.0 && p.0.is_finite() && p.1 > 0.0))
    {
        return Err(Error::Fit(format!(
            "errors and alphas must be positive and finite, got ({}, {})",
            p.0, p.1
        )));
    }
    let use_alpha = model != FitModel::N;
    let use_n = model != FitModel::Alpha;
    let distinct = |f: &dyn Fn(&(f64, f64, u32)) -> f64| {
        let first = f(&points[0]);
        points.iter().any(|p| f(p) != first)
    };
    if use_alpha && !distinct(&|p| p.1) {
        return Err(Error::Fit("a single alpha cannot determine p_alpha".into()));
    }
    if use_n && !distinct(&|p| p.2 as f64) {
        return Err(Error::Fit("a single n cannot determine p_n".into()));
    }

    let row = |p: &(f64, f64, u32)| {
        let mut r = vec![1.0];
        if use_alpha {
            r.push(p.1.ln());
        }
        if use_n {
            r.push(p.2 as f64 * std::f64::consts::LN_2);
        }
        r
    };
    let m = 1 + use_alpha as usize + use_n as usize;
    let mut ata = vec![vec![0.0; m]; m];
    let mut aty = vec![0.0; m];
    for p in points {
        let r = row(p);
        let y = p.0.ln();
        for i in 0..m {
            aty[i] += r[i] * y;
            for j in 0..m {
                ata[i][j] += r[i] * r[j];
            }
        }
    }
    let beta = solve_small(ata, aty)?;
    let mut k = 1;
    let p_alpha = use_alpha.then(|| {
        k += 1;
        beta[k - 1]
    });
    let p_n = use_n.then(|| beta[k]);

    let shape = |p: &(f64, f64, u32)| {
        p.1.powf(p_alpha.unwrap_or(0.0)) * 2f64.powf(p_n.unwrap_or(0.0) * p.2 as f64)
    };
    let logs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let mean = logs.iter().sum::<f64>() / logs.len() as f64;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    let mut residual_max: f64 = 0.0;
    let mut implied: f64 = 0.0;
    for (p, y) in points.iter().zip(&logs) {
        let fitted: f64 = row(p).iter().zip(&beta).map(|(a, b)| a * b).sum();
        let r = y - fitted;
        ss_res += r * r;
        ss_tot += (y - mean).powi(2);
        residual_max = residual_max.max(r.abs());
        implied = implied.max(p.0 / shape(p));
    }
    let r_squared = if ss_tot == 0.0 {
        1.0
    } else {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    };
    Ok(FitResult {
        p_alpha,
        p_n,
        prefactor: beta[0].exp(),
        implied_constant: implied,
        r_squared,
        residual_max,
        points: points.len(),
    })
}

/// Norms at indices `s-1, s, s+1` of each decomposition term, per sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionTerms {
    pub alpha: f64,
    pub n: u32,
    pub indices: [f64; 3],
    pub times: Vec<f64>,
    /// `S^α(u₀) - S^α(S_n u₀)`.
    pub outer_alpha: Vec<[f64; 3]>,
    /// `S^α(S_n u₀) - S^0(S_n u₀)`.
    pub middle: Vec<[f64; 3]>,
    /// `S^0(S_n u₀) - S^0(u₀)`.
    pub outer_zero: Vec<[f64; 3]>,
    /// `S^α(u₀) - S^0(u₀)`.
    pub total: Vec<[f64; 3]>,
    /// `‖u₀ - S_n u₀‖_{H^s}`.
    pub tail: f64,
}

impl DecompositionTerms {
    /// Largest `total - (outer_alpha + middle + outer_zero)` over samples and indices.
    pub fn triangle_excess(&self) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for t in 0..self.times.len() {
            for i in 0..3 {
                let sum = self.outer_alpha[t][i] + self.middle[t][i] + self.outer_zero[t][i];
                worst = worst.max(self.total[t][i] - sum);
            }
        }
        worst
    }

    /// `‖w‖_{H^{s-1}}^{1/2}‖w‖_{H^{s+1}}^{1/2} - ‖w‖_{H^s}` for the middle term.
    pub fn interpolation_deficits(&self) -> Vec<f64> {
        self.middle
            .iter()
            .map(|m| (m[0] * m[2]).sqrt() - m[1])
            .collect()
    }

    pub fn sup(series: &[[f64; 3]], index: usize) -> f64 {
        series.iter().map(|v| v[index]).fold(0.0, f64::max)
    }
}

fn diff_norms(a: &Field, b: &Field, indices: &[f64; 3]) -> Result<[f64; 3]> {
    let spec = transform_forward(&a.sub(b)?)?;
    Ok(indices.map(|s| hs_norm_sq_spectrum(&spec, s).sqrt()))
}

fn series(a: &Trajectory, b: &Trajectory, indices: &[f64; 3]) -> Result<Vec<[f64; 3]>> {
    a.fields()
        .iter()
        .zip(b.fields())
        .map(|(x, y)| diff_norms(x, y, indices))
        .collect()
}

fn alpha_label(alpha: f64) -> String {
    format!("{alpha}")
}

/// Every solution a sweep needs, advanced in one lockstep ensemble:
/// `S^α(u₀)` and `S^α(S_n u₀)` for `α ∈ {0} ∪ alphas` and each `n`.
#[derive(Clone, Debug)]
pub struct SweepRuns {
    pub config: SweepConfig,
    pub datum: Field,
    pub cut_data: Vec<Field>,
    pub tails: Vec<f64>,
    /// Index 0 is `α = 0`, then the alpha grid in order.
    pub full: Vec<Trajectory>,
    pub cut: Vec<Vec<Trajectory>>,
}

impl SweepRuns {
    pub fn run(cfg: &SweepConfig) -> Result<Self> {
        cfg.validate()?;
        let grid = cfg.grid()?;
        let datum = synth_initial(&cfg.datum, &grid)?;
        let indices = cfg.indices();
        let mut cut_data = Vec::new();
        let mut tails = Vec::new();
        for &n in &cfg.ns {
            let cut = low_cutoff(&datum, n, cfg.cutoff)?;
            tails.push(diff_norms(&datum, &cut, &indices)?[1]);
            cut_data.push(cut);
        }

        let params: Vec<ModelParams> = std::iter::once(ModelParams::burgers())
            .chain(cfg.alphas.iter().map(|&a| ModelParams::camassa_holm(a)))
            .collect();
        let mut members = Vec::new();
        let mut labels = Vec::new();
        for (d, field) in std::iter::once(&datum).chain(&cut_data).enumerate() {
            for p in &params {
                members.push((field.clone(), *p));
                let which = if d == 0 {
                    "u0".to_string()
                } else {
                    format!("S{}u0", cfg.ns[d - 1])
                };
                labels.push(format!("{which}_alpha{}", alpha_label(p.effective_alpha())));
            }
        }
        let control = cfg.run_control();
        let trajectories = solve_ensemble(&members, &control, cfg.jobs)?;
        for (traj, label) in trajectories.iter().zip(&labels) {
            if !traj.status.is_completed() {
                return Err(Error::RunFailed {
                    run: label.clone(),
                    detail: format!("{:?}", traj.status),
                });
            }
        }
        let per = params.len();
        let mut chunks = trajectories.chunks(per).map(|c| c.to_vec());
        let full = chunks.next().expect("datum runs");
        let cut = chunks.collect();
        Ok(SweepRuns {
            config: cfg.clone(),
            datum,
            cut_data,
            tails,
            full,
            cut,
        })
    }

    /// Run identifiers paired with their diagnostic records.
    pub fn series(&self) -> Vec<(String, &[Record])> {
        let mut out = Vec::new();
        let name = |d: Option<u32>, t: &Trajectory| {
            let which = d.map_or("u0".to_string(), |n| format!("S{n}u0"));
            format!("{which}_alpha{}", alpha_label(t.params.effective_alpha()))
        };
        for t in &self.full {
            out.push((name(None, t), t.records.as_slice()));
        }
        for (n, runs) in self.config.ns.iter().zip(&self.cut) {
            for t in runs {
                out.push((name(Some(*n), t), t.records.as_slice()));
            }
        }
        out
    }

    /// Decomposition for `alphas[ai]` and `ns[ni]`.
    pub fn decomposition(&self, ai: usize, ni: usize) -> Result<DecompositionTerms> {
        let idx = self.config.indices();
        let (a_full, z_full) = (&self.full[ai + 1], &self.full[0]);
        let (a_cut, z_cut) = (&self.cut[ni][ai + 1], &self.cut[ni][0]);
        Ok(DecompositionTerms {
            alpha: self.config.alphas[ai],
            n: self.config.ns[ni],
            indices: idx,
            times: a_full.times(),
            outer_alpha: series(a_full, a_cut, &idx)?,
            middle: series(a_cut, z_cut, &idx)?,
            outer_zero: series(z_cut, z_full, &idx)?,
            total: series(a_full, z_full, &idx)?,
            tail: self.tails[ni],
        })
    }

    fn decompositions(&self) -> Result<Vec<Vec<DecompositionTerms>>> {
        (0..self.config.ns.len())
            .map(|ni| {
                (0..self.config.alphas.len())
                    .map(|ai| self.decomposition(ai, ni))
                    .collect()
            })
            .collect()
    }

    /// `sup_t ‖S^α(u₀) - S^0(u₀)‖` at indices `s-1, s, s+1` for each grid alpha.
    fn total_errors(&self) -> Result<Vec<[f64; 3]>> {
        let idx = self.config.indices();
        self.full[1..]
            .iter()
            .map(|t| {
                let s = series(t, &self.full[0], &idx)?;
                Ok([0, 1, 2].map(|i| DecompositionTerms::sup(&s, i)))
            })
            .collect()
    }

    pub fn uniform_bound(&self) -> UniformBoundReport {
        let sup = |i: usize| -> Vec<f64> {
            self.full[1..]
                .iter()
                .map(|t| t.norm_series(i).into_iter().fold(0.0, f64::max))
                .collect()
        };
        let (hs, hs1) = (sup(0), sup(2));
        let spread_hs = spread(&hs);
        let spread_hs_plus_1 = spread(&hs1);
        let alphas = &self.config.alphas;
        let trend = |v: &[f64]| {
            let (first, last) = (v[0], v[v.len() - 1]);
            if first > 0.0 && last > 0.0 && alphas.len() > 1 {
                Some((last / first).ln() / (alphas[alphas.len() - 1] / alphas[0]).ln())
            } else {
                None
            }
        };
        let trend_exponent = trend(&hs);
        let trend_ok = trend_exponent.is_none_or(|p| p >= -UNIFORM_TREND_FLOOR);
        let verdict = Verdict::check(
            "uniform_bound",
            spread_hs <= UNIFORM_SPREAD && spread_hs_plus_1 <= UNIFORM_SPREAD && trend_ok,
            format!(
                "sup H^s spread {spread_hs:.4}, sup H^(s+1) spread {spread_hs_plus_1:.4}, trend exponent {trend_exponent:?}"
            ),
        );
        UniformBoundReport {
            alphas: alphas.clone(),
            sup_hs: hs,
            sup_hs_plus_1: hs1,
            spread_hs,
            spread_hs_plus_1,
            trend_exponent,
            verdict,
        }
    }

    pub fn step2(&self) -> Result<Step2Report> {
        let scale = hs_norm_sq_spectrum(&transform_forward(&self.datum)?, self.config.s).sqrt();
        if let Some((ni, _)) = self
            .tails
            .iter()
            .enumerate()
            .find(|(_, t)| !(**t > DEGENERATE_TAIL * scale))
        {
            return Err(Error::Config(format!(
                "(Id - S_n)u0 vanishes for n = {}; the Step 2 constant needs a datum with high-frequency content",
                self.config.ns[ni]
            )));
        }
        let idx = self.config.indices();
        let mut cells = Vec::new();
        for (ni, &n) in self.config.ns.iter().enumerate() {
            let tail = self.tails[ni];
            for (k, traj) in self.full.iter().enumerate() {
                let v = series(traj, &self.cut[ni][k], &idx)?;
                cells.push(Step2Cell {
                    alpha: traj.params.effective_alpha(),
                    n,
                    constant: DecompositionTerms::sup(&v, 1) / tail,
                    constant_t0: v[0][1] / tail,
                    lower_index_ratio: DecompositionTerms::sup(&v, 0) * 2f64.powi(n as i32) / tail,
                });
            }
        }
        let spread_per_n: Vec<f64> = self
            .config
            .ns
            .iter()
            .map(|&n| {
                let c: Vec<f64> = cells
                    .iter()
                    .filter(|c| c.n == n && c.alpha > 0.0)
                    .map(|c| c.constant)
                    .collect();
                spread(&c)
            })
            .collect();
        let max_constant = cells.iter().map(|c| c.constant).fold(0.0, f64::max);
        let first_n = self.config.ns[0];
        let at_first = |f: &dyn Fn(&Step2Cell) -> f64| {
            cells
                .iter()
                .filter(|c| c.n == first_n)
                .map(f)
                .fold(0.0, f64::max)
        };
        let bounded_in_n = max_constant <= STEP2_SPREAD * at_first(&|c| c.constant);
        let max_lower = cells
            .iter()
            .map(|c| c.lower_index_ratio)
            .fold(0.0, f64::max);
        let lower_bounded = max_lower <= STEP2_SPREAD * at_first(&|c| c.lower_index_ratio);
        let initial_exact = cells.iter().all(|c| c.constant_t0 == 1.0);
        let worst_spread = spread_per_n.iter().cloned().fold(0.0, f64::max);
        let verdicts = vec![
            Verdict::check(
                "step2_uniform_in_alpha",
                worst_spread <= STEP2_SPREAD,
                format!("largest max/min of C(alpha, n) over the alpha grid: {worst_spread:.4}"),
            ),
            Verdict::check(
                "step2_initial_constant",
                initial_exact,
                "C(alpha, n) at t = 0 equals 1 for every cell".into(),
            ),
            Verdict::check(
                "step2_bounded_in_n",
                bounded_in_n && lower_bounded,
                format!("max C {max_constant:.4}, max lower-index ratio {max_lower:.4}"),
            ),
        ];
        Ok(Step2Report {
            tails: self
                .config
                .ns
                .iter()
                .cloned()
                .zip(self.tails.iter().cloned())
                .collect(),
            cells,
            spread_per_n,
            max_constant,
            verdicts,
        })
    }

    pub fn step3(&self) -> Result<Step3Report> {
        let decomps = self.decompositions()?;
        let mut per_n = Vec::new();
        let mut joint_points = Vec::new();
        let mut min_deficit = f64::INFINITY;
        let mut w_initial_zero = true;
        for (ni, &n) in self.config.ns.iter().enumerate() {
            let sup_hsm1: Vec<f64> = decomps[ni]
                .iter()
                .map(|d| DecompositionTerms::sup(&d.middle, 0))
                .collect();
            let sup_hs: Vec<f64> = decomps[ni]
                .iter()
                .map(|d| DecompositionTerms::sup(&d.middle, 1))
                .collect();
            for d in &decomps[ni] {
                w_initial_zero &= d.middle[0].iter().all(|v| *v == 0.0);
                for v in d.interpolation_deficits() {
                    min_deficit = min_deficit.min(v);
                }
            }
            let points: Vec<(f64, f64, u32)> = sup_hsm1
                .iter()
                .zip(&self.config.alphas)
                .map(|(&e, &a)| (e, a, n))
                .collect();
            joint_points.extend(points.iter().filter(|p| p.0 > 0.0).cloned());
            let ratios = sup_hsm1.windows(2).map(|w| w[0] / w[1]).collect();
            let fit = fit_scaling(&points, FitModel::Alpha).ok();
            let verdict = match &fit {
                None => Verdict::with_status(
                    &format!("step3_p_alpha_n{n}"),
                    VerdictStatus::Inconclusive,
                    "fit not possible".into(),
                ),
                Some(f) if f.r_squared < MIN_R_SQUARED => Verdict::with_status(
                    &format!("step3_p_alpha_n{n}"),
                    VerdictStatus::Inconclusive,
                    format!("r^2 = {:.4} below {MIN_R_SQUARED}", f.r_squared),
                ),
                Some(f) => {
                    let p = f.p_alpha.expect("alpha fit");
                    Verdict::check(
                        &format!("step3_p_alpha_n{n}"),
                        (P_ALPHA_WINDOW.0..=P_ALPHA_WINDOW.1).contains(&p),
                        format!("p_alpha = {p:.4}, r^2 = {:.4}", f.r_squared),
                    )
                }
            };
            per_n.push(Step3PerN {
                n,
                sup_w_hsm1: sup_hsm1,
                sup_w_hs: sup_hs,
                ratios,
                fit,
                verdict,
            });
        }
        let joint = fit_scaling(&joint_points, FitModel::Both).ok();
        let interpolation = Verdict::check(
            "step3_interpolation",
            min_deficit >= -INTERPOLATION_SLACK,
            format!("smallest interpolation deficit {min_deficit:e}"),
        );
        let initial = Verdict::check(
            "step3_initial_zero",
            w_initial_zero,
            "w(0) = 0 for every cell".into(),
        );
        Ok(Step3Report {
            per_n,
            joint,
            min_interpolation_deficit: min_deficit,
            verdicts: vec![interpolation, initial],
        })
    }

    pub fn convergence(&self) -> Result<ConvergenceReport> {
        let totals = self.total_errors()?;
        let e_hs: Vec<f64> = totals.iter().map(|v| v[1]).collect();
        let e_hsm1: Vec<f64> = totals.iter().map(|v| v[0]).collect();
        let ratios: Vec<f64> = e_hs.windows(2).map(|w| w[0] / w[1]).collect();
        let strictly_decreasing = e_hs.windows(2).all(|w| w[1] < w[0]);
        let alphas = &self.config.alphas;
        let mut verdicts = vec![Verdict::check(
            "convergence_monotone",
            strictly_decreasing,
            format!("E(alpha) = {e_hs:?}"),
        )];
        let points: Vec<(f64, f64, u32)> =
            e_hs.iter().zip(alphas).map(|(&e, &a)| (e, a, 0)).collect();
        let order = fit_scaling(&points, FitModel::Alpha).ok();
        if self.config.datum.is_band_limited() {
            let p = order.as_ref().and_then(|f| f.p_alpha);
            verdicts.push(Verdict::check(
                "convergence_order",
                p.is_some_and(|p| p >= MIN_BAND_LIMITED_ORDER),
                format!("fitted order {p:?}"),
            ));
            let in_window = ratios
                .iter()
                .all(|r| (RATIO_WINDOW.0..=RATIO_WINDOW.1).contains(r));
            verdicts.push(Verdict::check(
                "convergence_ratio_window",
                in_window,
                format!("E(alpha)/E(alpha/2) = {ratios:?}"),
            ));
        } else {
            let (first, last) = (e_hs[0], e_hs[e_hs.len() - 1]);
            verdicts.push(Verdict::check(
                "convergence_reduction",
                last < first / 4.0,
                format!("E(alpha_min)/E(alpha_max) = {:.4}", last / first),
            ));
        }
        Ok(ConvergenceReport {
            alphas: alphas.clone(),
            e_hs,
            e_hsm1,
            ratios,
            order,
            verdicts,
        })
    }

    /// Total error against `C₁‖(Id-S_n)u₀‖_{H^s} + C₂α2^{3n/2}` over the grid,
    /// with `C₁` the largest Step 2 constant (including `α = 0`) and `C₂` the
    /// largest `sup_t‖w‖_{H^s}/(α2^{3n/2})`.
    pub fn final_bound(&self) -> Result<FinalBoundReport> {
        let step2 = self.step2()?;
        let decomps = self.decompositions()?;
        let c1 = step2.max_constant;
        let mut c2: f64 = 0.0;
        for row in &decomps {
            for d in row {
                c2 = c2.max(DecompositionTerms::sup(&d.middle, 1) / middle_scale(d.alpha, d.n));
            }
        }
        let totals = self.total_errors()?;
        let mut cells = Vec::new();
        for row in &decomps {
            for (ai, d) in row.iter().enumerate() {
                let tail_term = c1 * d.tail;
                let alpha_term = c2 * middle_scale(d.alpha, d.n);
                let model = tail_term + alpha_term;
                let total = totals[ai][1];
                cells.push(FinalCell {
                    alpha: d.alpha,
                    n: d.n,
                    total,
                    tail_term,
                    alpha_term,
                    ratio: total / model,
                });
            }
        }
        let worst_ratio = cells.iter().map(|c| c.ratio).fold(0.0, f64::max);
        let verdict = Verdict::check(
            "final_envelope",
            worst_ratio <= ENVELOPE_FACTOR,
            format!("largest total/model {worst_ratio:.4} (C1 = {c1:.4}, C2 = {c2:.4e})"),
        );
        Ok(FinalBoundReport {
            c1,
            c2,
            cells,
            worst_ratio,
            verdict,
        })
    }

    /// Rows of `errors.csv`: the unfiltered datum (no `n`) and each filtered datum.
    pub fn error_rows(&self) -> Result<Vec<ErrorRow>> {
        let idx = self.config.indices();
        let t_end = self.config.control.t_end;
        let mut rows = Vec::new();
        let mut push = |alpha: f64, n: Option<u32>, a: &Trajectory, b: &Trajectory| -> Result<()> {
            let s = series(a, b, &idx)?;
            rows.push(ErrorRow {
                alpha,
                n,
                s: self.config.s,
                sup_t_error_hs: DecompositionTerms::sup(&s, 1),
                sup_t_error_hsm1: DecompositionTerms::sup(&s, 0),
                t_end,
                status: a.status.label().to_string(),
            });
            Ok(())
        };
        for (ai, &alpha) in self.config.alphas.iter().enumerate() {
            push(alpha, None, &self.full[ai + 1], &self.full[0])?;
            for (ni, &n) in self.config.ns.iter().enumerate() {
                push(alpha, Some(n), &self.cut[ni][ai + 1], &self.cut[ni][0])?;
            }
        }
        Ok(rows)
    }
}

fn middle_scale(alpha: f64, n: u32) -> f64 {
    alpha * 2f64.powf(1.5 * n as f64)
}

/// `max/min`, with `1` for an all-zero list and `∞` when only the minimum vanishes.
fn spread(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(0.0, f64::max);
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    if max == 0.0 {
        1.0
    } else if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub const UNIFORM_SPREAD: f64 = 2.0;
/// Largest tolerated growth exponent of `sup_t‖S^α u₀‖` as `α` decreases.
pub const UNIFORM_TREND_FLOOR: f64 = 0.1;
pub const STEP2_SPREAD: f64 = 3.0;
pub const P_ALPHA_WINDOW: (f64, f64) = (1.7, 2.3);
pub const MIN_R_SQUARED: f64 = 0.9;
pub const RATIO_WINDOW: (f64, f64) = (3.0, 4.6);
pub const MIN_BAND_LIMITED_ORDER: f64 = 1.5;
pub const ENVELOPE_FACTOR: f64 = 1.5;
pub const INTERPOLATION_SLACK: f64 = 1e-12;
/// Tails below this fraction of `‖u₀‖_{H^s}` are roundoff.
const DEGENERATE_TAIL: f64 = 1e-9;

#[derive(Clone, Debug, Serialize)]
pub struct UniformBoundReport {
    pub alphas: Vec<f64>,
    pub sup_hs: Vec<f64>,
    pub sup_hs_plus_1: Vec<f64>,
    pub spread_hs: f64,
    pub spread_hs_plus_1: f64,
    pub trend_exponent: Option<f64>,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, Serialize)]
pub struct Step2Cell {
    pub alpha: f64,
    pub n: u32,
    /// `sup_t ‖v‖_{H^s} / ‖(Id-S_n)u₀‖_{H^s}`.
    pub constant: f64,
    pub constant_t0: f64,
    /// `sup_t ‖v‖_{H^{s-1}} 2^n / ‖(Id-S_n)u₀‖_{H^s}`.
    pub lower_index_ratio: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Step2Report {
    pub tails: Vec<(u32, f64)>,
    pub cells: Vec<Step2Cell>,
    pub spread_per_n: Vec<f64>,
    pub max_constant: f64,
    pub verdicts: Vec<Verdict>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Step3PerN {
    pub n: u32,
    pub sup_w_hsm1: Vec<f64>,
    pub sup_w_hs: Vec<f64>,
    pub ratios: Vec<f64>,
    pub fit: Option<FitResult>,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, Serialize)]
pub struct Step3Report {
    pub per_n: Vec<Step3PerN>,
    /// Fit in both `α` and `n`; `p_n` is reported only.
    pub joint: Option<FitResult>,
    pub min_interpolation_deficit: f64,
    pub verdicts: Vec<Verdict>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceReport {
    pub alphas: Vec<f64>,
    pub e_hs: Vec<f64>,
    pub e_hsm1: Vec<f64>,
    pub ratios: Vec<f64>,
    pub order: Option<FitResult>,
    pub verdicts: Vec<Verdict>,
}

#[derive(Clone, Debug, Serialize)]
pub struct FinalCell {
    pub alpha: f64,
    pub n: u32,
    pub total: f64,
    pub tail_term: f64,
    pub alpha_term: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct FinalBoundReport {
    pub c1: f64,
    pub c2: f64,
    pub cells: Vec<FinalCell>,
    pub worst_ratio: f64,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ErrorRow {
    pub alpha: f64,
    pub n: Option<u32>,
    pub s: f64,
    pub sup_t_error_hs: f64,
    pub sup_t_error_hsm1: f64,
    pub t_end: f64,
    pub status: String,
}

/// Everything a sweep measures. Probes that do not apply to the datum (Step 2
/// and the final envelope need high-frequency content) are `None` and carry a
/// not-applicable verdict.
#[derive(Clone, Debug, Serialize)]
pub struct SweepReport {
    pub config: SweepConfig,
    pub rows: Vec<ErrorRow>,
    pub uniform: UniformBoundReport,
    pub step2: Option<Step2Report>,
    pub step3: Step3Report,
    pub convergence: ConvergenceReport,
    pub final_bound: Option<FinalBoundReport>,
    pub verdicts: Vec<Verdict>,
}

impl SweepReport {
    pub fn empty(config: &SweepConfig) -> Self {
        let na =
            |name: &str| Verdict::with_status(name, VerdictStatus::NotApplicable, "no runs".into());
        SweepReport {
            config: config.clone(),
            rows: Vec::new(),
            uniform: UniformBoundReport {
                alphas: Vec::new(),
                sup_hs: Vec::new(),
                sup_hs_plus_1: Vec::new(),
                spread_hs: 1.0,
                spread_hs_plus_1: 1.0,
                trend_exponent: None,
                verdict: na("uniform_bound"),
            },
            step2: None,
            step3: Step3Report {
                per_n: Vec::new(),
                joint: None,
                min_interpolation_deficit: 0.0,
                verdicts: Vec::new(),
            },
            convergence: ConvergenceReport {
                alphas: Vec::new(),
                e_hs: Vec::new(),
                e_hsm1: Vec::new(),
                ratios: Vec::new(),
                order: None,
                verdicts: Vec::new(),
            },
            final_bound: None,
            verdicts: Vec::new(),
        }
    }

    pub fn any_failed(&self) -> bool {
        self.verdicts.iter().any(Verdict::failed)
    }
}

/// Runs the full study: uniform bound, Step 2, Step 3, convergence and the final envelope.
pub fn run_sweep(cfg: &SweepConfig) -> Result<(SweepReport, SweepRuns)> {
    let runs = SweepRuns::run(cfg)?;
    let report = report_from_runs(&runs)?;
    Ok((report, runs))
}

pub fn report_from_runs(runs: &SweepRuns) -> Result<SweepReport> {
    let uniform = runs.uniform_bound();
    let step3 = runs.step3()?;
    let convergence = runs.convergence()?;
    let (step2, final_bound) = match runs.step2() {
        Ok(s2) => (Some(s2), Some(runs.final_bound()?)),
        Err(Error::Config(_)) => (None, None),
        Err(e) => return Err(e),
    };
    let mut verdicts = vec![uniform.verdict.clone()];
    match &step2 {
        Some(s) => verdicts.extend(s.verdicts.iter().cloned()),
        None => verdicts.push(Verdict::with_status(
            "step2",
            VerdictStatus::NotApplicable,
            "datum has no content above the cutoffs".into(),
        )),
    }
    verdicts.extend(step3.per_n.iter().map(|p| p.verdict.clone()));
    verdicts.extend(step3.verdicts.iter().cloned());
    verdicts.extend(convergence.verdicts.iter().cloned());
    match &final_bound {
        Some(f) => verdicts.push(f.verdict.clone()),
        None => verdicts.push(Verdict::with_status(
            "final_envelope",
            VerdictStatus::NotApplicable,
            "needs the Step 2 constant".into(),
        )),
    }
    Ok(SweepReport {
        config: runs.config.clone(),
        rows: runs.error_rows()?,
        uniform,
        step2,
        step3,
        convergence,
        final_bound,
        verdicts,
    })
}

pub fn uniform_bound_probe(cfg: &SweepConfig) -> Result<UniformBoundReport> {
    let reduced = SweepConfig {
        ns: Vec::new(),
        ..cfg.clone()
    };
    Ok(SweepRuns::run(&reduced)?.uniform_bound())
}

/// Four solves `S^α(u₀)`, `S^α(S_n u₀)`, `S^0(S_n u₀)`, `S^0(u₀)` in lockstep.
pub fn bona_smith_decompose(cfg: &SweepConfig, alpha: f64, n: u32) -> Result<DecompositionTerms> {
    let single = SweepConfig {
        alphas: vec![alpha],
        ns: vec![n],
        ..cfg.clone()
    };
    SweepRuns::run(&single)?.decomposition(0, 0)
}

pub fn step2_probe(cfg: &SweepConfig) -> Result<Step2Report> {
    SweepRuns::run(cfg)?.step2()
}

pub fn step3_probe(cfg: &SweepConfig) -> Result<Step3Report> {
    SweepRuns::run(cfg)?.step3()
}

pub fn zero_filter_convergence(cfg: &SweepConfig) -> Result<ConvergenceReport> {
    let reduced = SweepConfig {
        ns: Vec::new(),
        ..cfg.clone()
    };
    SweepRuns::run(&reduced)?.convergence()
}

pub fn final_bound_check(cfg: &SweepConfig) -> Result<FinalBoundReport> {
    SweepRuns::run(cfg)?.final_bound()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::{high_pass, hs_norm_value};
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_config(datum: InitialDatum) -> SweepConfig {
        SweepConfig {
            datum,
            n_points: 64,
            ns: vec![2, 3],
            control: StepControl {
                t_end: 0.02,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn band_limited_datum_modes() {
        let g = Grid::new(256, 2.0 * PI).unwrap();
        let u = synth_initial(&InitialDatum::BandLimited, &g).unwrap();
        let s = transform_forward(&u).unwrap();
        for j in 0..g.n_points() {
            if g.wavenumber(j).abs() > 2 {
                assert!(s.coeffs()[j].norm() < 1e-15);
            }
        }
        assert!((s.coeff(1) - Complex64::new(0.0, -0.5)).norm() < 1e-15);
        assert!((s.coeff(2) - Complex64::new(0.25, 0.0)).norm() < 1e-15);
        let off = Grid::new(64, 3.0).unwrap();
        assert!(matches!(
            synth_initial(&InitialDatum::Sine, &off),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn rough_datum_normalized_and_tail_matches_construction() {
        let g = Grid::new(256, 2.0 * PI).unwrap();
        let s = 2.0;
        let u = synth_initial(&InitialDatum::Rough { s, seed: 4 }, &g).unwrap();
        assert!((hs_norm_value(&u, s).unwrap() - 1.0).abs() < 1e-12);

        // (1+|ξ|)^{-(s+0.6)} on every mode but the Nyquist one; phases drop out.
        let weight = |xi: f64| (1.0 + xi * xi).powf(s) * (1.0 + xi.abs()).powf(-2.0 * (s + 0.6));
        let modes: Vec<f64> = (0..g.n_points())
            .filter(|&j| j != g.nyquist_index())
            .map(|j| g.frequency(j))
            .collect();
        let total: f64 = modes.iter().map(|&xi| weight(xi)).sum();
        for n in 1..7 {
            let edge = sharp_edge(n);
            let tail: f64 = modes
                .iter()
                .filter(|xi| xi.abs() >= edge)
                .map(|&xi| weight(xi))
                .sum();
            let expected = (tail / total).sqrt();
            let measured = hs_norm_value(&high_pass(&u, n, CutoffMode::Sharp).unwrap(), s).unwrap();
            assert!((measured - expected).abs() < 1e-12, "n {n}");
        }
    }

    #[test]
    fn datum_parsing_round_trips() {
        for text in [
            "band_limited",
            "sine",
            "zero",
            "rough:s=2.5,seed=7",
            "peakon:c=1,alpha=0.5",
        ] {
            let d: InitialDatum = text.parse().unwrap();
            assert_eq!(d.to_string().parse::<InitialDatum>().unwrap(), d);
        }
        assert!("rough:q=1".parse::<InitialDatum>().is_err());
        assert!("wave".parse::<InitialDatum>().is_err());
        assert!("rough:seed=-1".parse::<InitialDatum>().is_err());
    }

    #[test]
    fn smoothed_peakon_is_mollified() {
        let g = Grid::new(512, 8.0 * PI).unwrap();
        let d = InitialDatum::PeakonSmoothed {
            c: 1.0,
            alpha: 1.0,
            xi_c: Some(4.0),
        };
        let u = synth_initial(&d, &g).unwrap();
        assert!(u.max_abs() < 1.0 && u.max_abs() > 0.5);
        let s = transform_forward(&u).unwrap();
        let raw = transform_forward(&peakon_field(1.0, 1.0, 0.0, &g).unwrap()).unwrap();
        let j = g.index_of(160).unwrap();
        assert!(raw.coeffs()[j].norm() > 1e-6);
        assert!(s.coeffs()[j].norm() < 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(SweepConfig::default().validate().is_ok());
        let bad = |f: &dyn Fn(&mut SweepConfig)| {
            let mut c = SweepConfig::default();
            f(&mut c);
            c.validate().is_err()
        };
        assert!(bad(&|c| c.s = 1.5));
        assert!(bad(&|c| c.alphas = vec![0.1, 0.2]));
        assert!(bad(&|c| c.alphas = vec![1.0, 0.5]));
        assert!(bad(&|c| c.ns = vec![3, 2]));
        assert!(bad(&|c| c.ns = vec![2, 9]));
        assert!(bad(&|c| c.alphas.clear()));
    }

    #[test]
    fn fit_exact_data() {
        let mut pts = Vec::new();
        for &a in &[0.2, 0.1, 0.05] {
            for n in 2..5 {
                pts.push((7.0 * a * a * 2f64.powi(2 * n as i32), a, n));
            }
        }
        let f = fit_scaling(&pts, FitModel::Both).unwrap();
        assert!((f.p_alpha.unwrap() - 2.0).abs() < 1e-10);
        assert!((f.p_n.unwrap() - 2.0).abs() < 1e-10);
        assert!((f.prefactor - 7.0).abs() < 1e-10);
        assert!((f.implied_constant - 7.0).abs() < 1e-9);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fit_noisy_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut pts = Vec::new();
        for &a in &[0.2_f64, 0.1, 0.05, 0.025, 0.0125] {
            for n in 2..7 {
                let noise = 1.0 + rng.gen_range(-0.01..0.01);
                pts.push((3.0 * a.powf(1.5) * 2f64.powf(0.5 * n as f64) * noise, a, n));
            }
        }
        let f = fit_scaling(&pts, FitModel::Both).unwrap();
        assert!((f.p_alpha.unwrap() - 1.5).abs() < 0.05);
        assert!((f.p_n.unwrap() - 0.5).abs() < 0.05);
    }

    #[test]
    fn fit_constant_and_degenerate() {
        let pts: Vec<_> = [0.2, 0.1, 0.05, 0.025]
            .iter()
            .flat_map(|&a| (2..4).map(move |n| (4.2, a, n)))
            .collect();
        let f = fit_scaling(&pts, FitModel::Both).unwrap();
        assert!(f.p_alpha.unwrap().abs() < 1e-12 && f.p_n.unwrap().abs() < 1e-12);
        assert_eq!(f.r_squared, 1.0);

        let single_n: Vec<_> = [0.2, 0.1, 0.05, 0.025]
            .iter()
            .map(|&a| (a * a, a, 3))
            .collect();
        assert!(matches!(
            fit_scaling(&single_n, FitModel::Both),
            Err(Error::Fit(_))
        ));
        let f = fit_scaling(&single_n, FitModel::Alpha).unwrap();
        assert!((f.p_alpha.unwrap() - 2.0).abs() < 1e-10);
        assert!(fit_scaling(&single_n[..3], FitModel::Alpha).is_err());
        let mut bad = single_n.clone();
        bad[0].0 = 0.0;
        assert!(fit_scaling(&bad, FitModel::Alpha).is_err());
    }

    #[test]
    fn zero_datum_probes() {
        let cfg = small_config(InitialDatum::Zero);
        let u = uniform_bound_probe(&cfg).unwrap();
        assert!(u.sup_hs.iter().all(|v| *v == 0.0));
        let runs = SweepRuns::run(&cfg).unwrap();
        let e = runs.convergence().unwrap();
        assert!(e.e_hs.iter().all(|v| *v == 0.0));
        assert!(matches!(runs.step2(), Err(Error::Config(_))));
    }

    #[test]
    fn decomposition_identities() {
        let cfg = small_config(InitialDatum::Sine);
        let d = bona_smith_decompose(&cfg, 0.1, 2).unwrap();
        // S_2 keeps |ξ| < 8/3, so S_2 sin = sin and the outer terms vanish.
        assert!(DecompositionTerms::sup(&d.outer_alpha, 2) < 1e-10);
        assert!(DecompositionTerms::sup(&d.outer_zero, 2) < 1e-10);
        assert!(d.triangle_excess() <= 1e-10);
        assert!(d.middle[0].iter().all(|v| *v == 0.0));
        assert_eq!(d.times.len(), d.total.len());
    }

    #[test]
    fn rough_sweep_invariants() {
        let cfg = SweepConfig {
            s: 2.0,
            ..small_config(InitialDatum::Rough { s: 2.0, seed: 1 })
        };
        let runs = SweepRuns::run(&cfg).unwrap();
        for ni in 0..cfg.ns.len() {
            for ai in 0..cfg.alphas.len() {
                let d = runs.decomposition(ai, ni).unwrap();
                assert!(d.triangle_excess() <= 1e-10);
                assert!(d.interpolation_deficits().iter().all(|v| *v >= -1e-12));
            }
        }
        let s2 = runs.step2().unwrap();
        assert!(s2.cells.iter().all(|c| c.constant_t0 == 1.0));
        assert!(s2.cells.iter().all(|c| c.constant >= 1.0));
        let s3 = runs.step3().unwrap();
        assert!(s3.min_interpolation_deficit >= -1e-12);

        let again = SweepRuns::run(&cfg).unwrap();
        assert_eq!(
            again.full[3].final_field().samples(),
            runs.full[3].final_field().samples()
        );
        let parallel = SweepRuns::run(&SweepConfig {
            jobs: 4,
            ..cfg.clone()
        })
        .unwrap();
        assert_eq!(
            parallel.cut[1][2].final_field().samples(),
            runs.cut[1][2].final_field().samples()
        );
    }

    #[test]
    fn middle_term_shrinks_with_alpha() {
        let cfg = small_config(InitialDatum::BandLimited);
        let runs = SweepRuns::run(&cfg).unwrap();
        let sups: Vec<f64> = (0..cfg.alphas.len())
            .map(|ai| DecompositionTerms::sup(&runs.decomposition(ai, 1).unwrap().middle, 1))
            .collect();
        assert!(sups.windows(2).all(|w| w[1] < w[0]), "{sups:?}");
        let report = report_from_runs(&runs).unwrap();
        assert!(report.step2.is_none());
        assert_eq!(report.rows.len(), cfg.alphas.len() * (1 + cfg.ns.len()));
    }

    #[test]
    fn failed_run_is_named() {
        let cfg = SweepConfig {
            control: StepControl {
                t_end: 0.5,
                ..Default::default()
            },
            ..small_config(InitialDatum::BandLimited)
        };
        match SweepRuns::run(&cfg) {
            Err(Error::RunFailed { run, .. }) => assert!(run.contains("alpha")),
            other => panic!("expected a run failure, got {other:?}"),
        }
    }
}
