//! Run configuration (INI), CHS1 field snapshots and sweep report files.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::dynamics::{ModelParams, Record, StepControl};
use crate::error::{Error, Result};
use crate::experiments::{InitialDatum, SweepConfig, SweepReport};
use crate::lp::CutoffMode;
use crate::spectral::{Field, Grid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
    Gnuplot,
}

impl OutputFormat {
    fn name(self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
            OutputFormat::Gnuplot => "gnuplot",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub n_points: usize,
    pub period: f64,
    pub alpha: f64,
    pub nu: f64,
    pub gamma: f64,
    pub dealias: bool,
    pub t_end: f64,
    pub cfl: f64,
    pub dt_max: f64,
    pub save_every: usize,
    pub u0: InitialDatum,
    pub alphas: Vec<f64>,
    pub ns: Vec<u32>,
    pub sobolev_s: f64,
    pub out_dir: PathBuf,
    pub formats: Vec<OutputFormat>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sweep = SweepConfig::default();
        let control = StepControl::default();
        RunConfig {
            n_points: 256,
            period: 2.0 * PI,
            alpha: 0.1,
            nu: 0.0,
            gamma: 2.0,
            dealias: true,
            t_end: control.t_end,
            cfl: control.cfl,
            dt_max: control.dt_max,
            save_every: control.save_every,
            u0: InitialDatum::BandLimited,
            alphas: sweep.alphas,
            ns: sweep.ns,
            sobolev_s: sweep.s,
            out_dir: PathBuf::from("out"),
            formats: vec![OutputFormat::Csv, OutputFormat::Json, OutputFormat::Gnuplot],
        }
    }
}

impl RunConfig {
    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.n_points, self.period)
    }

    /// `α = 0` selects the Burgers limit.
    pub fn model_params(&self) -> ModelParams {
        let base = if self.alpha == 0.0 {
            ModelParams::burgers()
        } else {
            ModelParams::camassa_holm(self.alpha)
        };
        ModelParams {
            dealias: self.dealias,
            ..base.with_dissipation(self.nu, self.gamma)
        }
    }

    /// Records `H^s` and `H^{s-1}` norms.
    pub fn step_control(&self) -> StepControl {
        StepControl {
            cfl: self.cfl,
            dt_max: self.dt_max,
            t_end: self.t_end,
            save_every: self.save_every,
            norm_indices: vec![self.sobolev_s, self.sobolev_s - 1.0],
            ..StepControl::default()
        }
    }

    pub fn sweep_config(&self, jobs: usize) -> SweepConfig {
        SweepConfig {
            datum: self.u0.clone(),
            s: self.sobolev_s,
            alphas: self.alphas.clone(),
            ns: self.ns.clone(),
            n_points: self.n_points,
            period: self.period,
            control: self.step_control(),
            cutoff: CutoffMode::Sharp,
            jobs,
        }
    }

    pub fn wants(&self, format: OutputFormat) -> bool {
        self.formats.contains(&format)
    }
}

fn parse_number(text: &str) -> Option<f64> {
    let t = text.trim();
    if let Ok(v) = t.parse::<f64>() {
        return Some(v);
    }
    let head = t.strip_suffix("pi")?.trim_end();
    let head = head.strip_suffix('*').unwrap_or(head).trim_end();
    if head.is_empty() {
        Some(PI)
    } else {
        head.parse::<f64>().ok().map(|m| m * PI)
    }
}

fn parse_list<T>(text: &str, item: impl Fn(&str) -> Option<T>) -> Option<Vec<T>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(item)
        .collect()
}

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

const KEYS: &[(&str, &[&str])] = &[
    ("grid", &["n_points", "period"]),
    ("model", &["alpha", "nu", "gamma", "dealias"]),
    ("time", &["t_end", "cfl", "dt_max", "save_every"]),
    ("data", &["u0"]),
    ("sweep", &["alphas", "ns", "sobolev_s"]),
    ("output", &["dir", "formats"]),
];

/// Parses INI-style text; every key is optional and unknown keys are rejected.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut section: Option<&str> = None;
    let mut lines: HashMap<&'static str, usize> = HashMap::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let err = |message: String| Error::Parse { line, message };
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| err(format!("malformed section header `{content}`")))?
                .trim();
            section = Some(
                KEYS.iter()
                    .find(|(s, _)| *s == name)
                    .map(|(s, _)| *s)
                    .ok_or_else(|| err(format!("unknown section [{name}]")))?,
            );
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| err(format!("expected `key = value`, got `{content}`")))?;
        let (key, value) = (key.trim(), value.trim());
        let sec = section.ok_or_else(|| err(format!("key `{key}` appears before any section")))?;
        let known = KEYS
            .iter()
            .find(|(s, _)| *s == sec)
            .and_then(|(_, keys)| keys.iter().find(|k| **k == key))
            .ok_or_else(|| err(format!("unknown key `{key}` in [{sec}]")))?;
        lines.insert(known, line);

        let number = || {
            parse_number(value)
                .ok_or_else(|| err(format!("`{key}` expects a number, got `{value}`")))
        };
        let count = || {
            value.parse::<usize>().map_err(|_| {
                err(format!(
                    "`{key}` expects a non-negative integer, got `{value}`"
                ))
            })
        };
        match *known {
            "n_points" => cfg.n_points = count()?,
            "period" => cfg.period = number()?,
            "alpha" => {
                cfg.alpha = number()?;
                if !(0.0..1.0).contains(&cfg.alpha) {
                    return Err(err(format!(
                        "alpha = {} violates the theorem hypothesis alpha in (0,1) (alpha = 0 selects the Burgers limit)",
                        cfg.alpha
                    )));
                }
            }
            "nu" => cfg.nu = number()?,
            "gamma" => cfg.gamma = number()?,
            "dealias" => {
                cfg.dealias = match value {
                    "true" | "yes" | "on" | "1" => true,
                    "false" | "no" | "off" | "0" => false,
                    _ => {
                        return Err(err(format!(
                            "`dealias` expects true or false, got `{value}`"
                        )))
                    }
                }
            }
            "t_end" => cfg.t_end = number()?,
            "cfl" => cfg.cfl = number()?,
            "dt_max" => cfg.dt_max = number()?,
            "save_every" => cfg.save_every = count()?,
            "u0" => {
                cfg.u0 = value.parse().map_err(|e: Error| err(e.to_string()))?;
            }
            "alphas" => {
                cfg.alphas = parse_list(value, parse_number).ok_or_else(|| {
                    err(format!(
                        "`alphas` expects a comma-separated list of numbers, got `{value}`"
                    ))
                })?;
            }
            "ns" => {
                cfg.ns = parse_list(value, |s| s.parse().ok()).ok_or_else(|| {
                    err(format!(
                        "`ns` expects a comma-separated list of integers, got `{value}`"
                    ))
                })?;
            }
            "sobolev_s" => {
                cfg.sobolev_s = number()?;
                if !(cfg.sobolev_s > 1.5) {
                    return Err(err(format!(
                        "sobolev_s = {} violates the hypothesis s > 3/2",
                        cfg.sobolev_s
                    )));
                }
            }
            "dir" => cfg.out_dir = PathBuf::from(value),
            "formats" => {
                cfg.formats = parse_list(value, |s| match s {
                    "csv" => Some(OutputFormat::Csv),
                    "json" => Some(OutputFormat::Json),
                    "gnuplot" => Some(OutputFormat::Gnuplot),
                    _ => None,
                })
                .ok_or_else(|| {
                    err(format!(
                        "`formats` accepts csv, json, gnuplot; got `{value}`"
                    ))
                })?;
            }
            _ => unreachable!("key table and match agree"),
        }
    }

    let at = |keys: &[&str]| {
        keys.iter()
            .filter_map(|k| lines.get(k))
            .copied()
            .max()
            .unwrap_or(0)
    };
    let located = |keys: &[&str], e: Error| Error::Parse {
        line: at(keys),
        message: e.to_string(),
    };
    cfg.grid()
        .map_err(|e| located(&["n_points", "period"], e))?;
    cfg.model_params()
        .validate()
        .map_err(|e| located(&["alpha", "nu", "gamma"], e))?;
    cfg.step_control()
        .validate()
        .map_err(|e| located(&["t_end", "cfl", "dt_max", "save_every"], e))?;
    crate::experiments::synth_initial(&cfg.u0, &cfg.grid()?)
        .map_err(|e| located(&["u0", "n_points", "period"], e))?;
    cfg.sweep_config(1)
        .validate_lists()
        .map_err(|e| located(&["alphas", "ns", "sobolev_s"], e))?;
    Ok(cfg)
}

/// Writes every key; `parse_config(&serialize_config(c)) == c`.
pub fn serialize_config(cfg: &RunConfig) -> String {
    let mut out = String::new();
    let formats: Vec<&str> = cfg.formats.iter().map(|f| f.name()).collect();
    let _ = write!(
        out,
        "[grid]\nn_points = {}\nperiod = {}\n\n\
         [model]\nalpha = {}\nnu = {}\ngamma = {}\ndealias = {}\n\n\
         [time]\nt_end = {}\ncfl = {}\ndt_max = {}\nsave_every = {}\n\n\
         [data]\nu0 = {}\n\n\
         [sweep]\nalphas = {}\nns = {}\nsobolev_s = {}\n\n\
         [output]\ndir = {}\nformats = {}\n",
        cfg.n_points,
        cfg.period,
        cfg.alpha,
        cfg.nu,
        cfg.gamma,
        cfg.dealias,
        cfg.t_end,
        cfg.cfl,
        cfg.dt_max,
        cfg.save_every,
        cfg.u0,
        join(&cfg.alphas),
        join(&cfg.ns),
        cfg.sobolev_s,
        cfg.out_dir.display(),
        formats.join(", "),
    );
    out
}

pub fn read_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

const MAGIC: &[u8; 4] = b"CHS1";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 40;

/// CHS1 bytes: magic, version, `N`, `L`, time, `α` (NaN when unset), samples.
pub fn encode_snapshot(f: &Field) -> Vec<u8> {
    let grid = f.grid();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * grid.n_points());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(grid.n_points() as u64).to_le_bytes());
    out.extend_from_slice(&grid.period().to_le_bytes());
    out.extend_from_slice(&f.time().unwrap_or(f64::NAN).to_le_bytes());
    out.extend_from_slice(&f.alpha().unwrap_or(f64::NAN).to_le_bytes());
    for v in f.samples() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_snapshot(bytes: &[u8]) -> Result<Field> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "truncated header: {} bytes, need {HEADER_LEN}",
            bytes.len()
        )));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected \"CHS1\"",
            String::from_utf8_lossy(&bytes[..4])
        )));
    }
    let word = |at: usize| -> [u8; 8] { bytes[at..at + 8].try_into().expect("8 bytes") };
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let n = u64::from_le_bytes(word(8));
    let expected = usize::try_from(n)
        .ok()
        .and_then(|n| n.checked_mul(8))
        .and_then(|b| b.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::Format(format!("implausible n_points {n}")))?;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "length {} does not match n_points {n} (expected {expected} bytes)",
            bytes.len()
        )));
    }
    let period = f64::from_le_bytes(word(16));
    let time = f64::from_le_bytes(word(24));
    let alpha = f64::from_le_bytes(word(32));
    let grid = Grid::new(n as usize, period).map_err(|e| Error::Format(e.to_string()))?;
    let samples = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let mut field = Field::new(&grid, samples).map_err(|e| Error::Format(e.to_string()))?;
    if !time.is_nan() {
        field = field.with_time(time);
    }
    if !alpha.is_nan() {
        field = field.with_alpha(alpha);
    }
    Ok(field)
}

pub fn write_snapshot(f: &Field, path: &Path) -> Result<()> {
    fs::write(path, encode_snapshot(f)).map_err(|e| Error::io(path, e))
}

pub fn read_snapshot(path: &Path) -> Result<Field> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_snapshot(&bytes)
}

/// Shortest decimal that round-trips to the same `f64`.
pub fn fmt_float(v: f64) -> String {
    format!("{v}")
}

pub const ERRORS_HEADER: &str = "alpha,n,s,sup_t_error_hs,sup_t_error_hsm1,t_end,status";
pub const NORMS_HEADER: &str = "t,hs_norm,hsm1_norm,min_slope,energy";

pub fn errors_csv(report: &SweepReport) -> String {
    let mut out = format!("{ERRORS_HEADER}\n");
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            fmt_float(r.alpha),
            r.n.map(|n| n.to_string()).unwrap_or_default(),
            fmt_float(r.s),
            fmt_float(r.sup_t_error_hs),
            fmt_float(r.sup_t_error_hsm1),
            fmt_float(r.t_end),
            r.status
        );
    }
    out
}

/// One row per record; the first two recorded norms are `H^s` and `H^{s-1}`.
pub fn norms_csv(records: &[Record]) -> String {
    let mut out = format!("{NORMS_HEADER}\n");
    for r in records {
        let norm = |i: usize| r.norms.get(i).copied().unwrap_or(f64::NAN);
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            fmt_float(r.time),
            fmt_float(norm(0)),
            fmt_float(norm(1)),
            fmt_float(r.min_slope),
            fmt_float(r.energy)
        );
    }
    out
}

pub fn gnuplot_script(run_ids: &[&str]) -> String {
    let mut out = String::from(
        "set datafile separator ','\n\
         set key autotitle columnhead\n\
         set logscale xy\n\
         set xlabel 'alpha'\n\
         set ylabel 'sup_t error in H^s'\n\
         set terminal pngcairo size 900,600\n\
         set output 'errors.png'\n\
         plot 'errors.csv' using 1:(strcol(2) eq '' ? $4 : 1/0) with linespoints title 'u0', \\\n\
         \x20    'errors.csv' using 1:(strcol(2) ne '' ? $4 : 1/0) with points title 'S_n u0'\n",
    );
    if !run_ids.is_empty() {
        out.push_str(
            "unset logscale\n\
             set xlabel 't'\n\
             set ylabel 'H^s norm'\n\
             set output 'norms.png'\n\
             plot ",
        );
        let lines: Vec<String> = run_ids
            .iter()
            .map(|id| format!("'norms_{id}.csv' using 1:2 with lines title '{id}'"))
            .collect();
        out.push_str(&lines.join(", \\\n     "));
        out.push('\n');
    }
    out
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Writes `errors.csv`, `summary.json`, `norms_<runid>.csv` and `plot.gp` under `dir`
/// as selected by `formats`; returns the written paths.
pub fn emit_report(
    report: &SweepReport,
    series: &[(String, &[Record])],
    dir: &Path,
    formats: &[OutputFormat],
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    if formats.contains(&OutputFormat::Csv) {
        written.push(write_file(dir, "errors.csv", &errors_csv(report))?);
        for (id, records) in series {
            written.push(write_file(
                dir,
                &format!("norms_{id}.csv"),
                &norms_csv(records),
            )?);
        }
    }
    if formats.contains(&OutputFormat::Json) {
        let json = serde_json::to_string_pretty(report)?;
        written.push(write_file(dir, "summary.json", &json)?);
    }
    if formats.contains(&OutputFormat::Gnuplot) {
        let ids: Vec<&str> = series.iter().map(|(id, _)| id.as_str()).collect();
        written.push(write_file(dir, "plot.gp", &gnuplot_script(&ids))?);
    }
    Ok(written)
}
