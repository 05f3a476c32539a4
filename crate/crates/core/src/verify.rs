//! Self-contained invariant suites run by `chlab verify`.

use std::f64::consts::PI;
use std::str::FromStr;

use serde::Serialize;

use crate::dynamics::{solve, solve_ensemble, ModelParams, StepControl};
use crate::error::{Error, Result};
use crate::lp::{
    high_pass, hs_norm_value, interpolation_check, low_cutoff, rough_field, CutoffMode,
    DyadicPartition,
};
use crate::oracles::{
    energy_ch, fd_reference, peakon_field, peakon_h1_norm_sq, shock_time, CharacteristicSolution,
};
use crate::spectral::{
    dealias, derivative, helmholtz_forward, helmholtz_inverse, transform_forward,
    transform_inverse, Field, Grid,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Spectral,
    Lp,
    Oracle,
    Conservation,
}

impl Suite {
    pub const ALL: [Suite; 4] = [
        Suite::Spectral,
        Suite::Lp,
        Suite::Oracle,
        Suite::Conservation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Spectral => "spectral",
            Suite::Lp => "lp",
            Suite::Oracle => "oracle",
            Suite::Conservation => "conservation",
        }
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|suite| suite.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown suite `{s}` (spectral, lp, oracle, conservation)"
                ))
            })
    }
}

/// `value ≤ tolerance` decides the outcome.
#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    fn at_most(name: &'static str, value: f64, tolerance: f64) -> Self {
        Check {
            name,
            value,
            tolerance,
            passed: value <= tolerance,
        }
    }
}

pub fn run_suite(suite: Suite) -> Result<Vec<Check>> {
    match suite {
        Suite::Spectral => spectral_suite(),
        Suite::Lp => lp_suite(),
        Suite::Oracle => oracle_suite(),
        Suite::Conservation => conservation_suite(),
    }
}

fn smooth_datum(grid: &Grid) -> Result<Field> {
    Field::from_fn(grid, |x| (x.sin()).exp() - 0.4 * (3.0 * x).cos())
}

fn spectral_suite() -> Result<Vec<Check>> {
    let g = Grid::new(128, 2.0 * PI)?;
    let rough = rough_field(&g, 2.0, 3)?;
    let smooth = smooth_datum(&g)?;
    let mut checks = Vec::new();

    let spec = transform_forward(&rough)?;
    let back = transform_inverse(&spec)?;
    checks.push(Check::at_most(
        "round_trip",
        back.linf_distance(&rough)? / rough.max_abs(),
        1e-13,
    ));
    let parseval = spec.l2_norm_sq();
    checks.push(Check::at_most(
        "parseval",
        (parseval / rough.l2_norm().powi(2) - 1.0).abs(),
        1e-12,
    ));
    checks.push(Check::at_most(
        "hermitian",
        spec.hermitian_asymmetry(),
        1e-14,
    ));

    let d = derivative(&smooth, 1)?;
    let exact = Field::from_fn(&g, |x| x.cos() * x.sin().exp() + 1.2 * (3.0 * x).sin())?;
    checks.push(Check::at_most(
        "derivative",
        d.linf_distance(&exact)?,
        1e-11,
    ));

    let h = helmholtz_forward(&helmholtz_inverse(&rough, 0.3)?, 0.3)?;
    checks.push(Check::at_most(
        "helmholtz_inverse",
        h.linf_distance(&rough)? / rough.max_abs(),
        1e-12,
    ));

    let cut = dealias(&spec);
    let leak = (0..g.n_points())
        .filter(|&j| g.wavenumber(j).unsigned_abs() as usize > g.dealias_limit())
        .map(|j| cut.coeffs()[j].norm())
        .fold(0.0, f64::max);
    checks.push(Check::at_most("dealias_band", leak, 0.0));
    Ok(checks)
}

fn lp_suite() -> Result<Vec<Check>> {
    let g = Grid::new(256, 2.0 * PI)?;
    let rough = rough_field(&g, 2.0, 9)?;
    let mut checks = vec![Check::at_most(
        "partition_of_unity",
        DyadicPartition::new(&g).unity_deviation(),
        1e-12,
    )];

    let sin = Field::from_fn(&g, f64::sin)?;
    checks.push(Check::at_most(
        "sine_h2_norm",
        (hs_norm_value(&sin, 2.0)? - (4.0 * PI).sqrt()).abs(),
        1e-12,
    ));

    let mut split: f64 = 0.0;
    for n in 1..6 {
        for mode in [CutoffMode::Sharp, CutoffMode::Smooth] {
            let sum = low_cutoff(&rough, n, mode)?.add(&high_pass(&rough, n, mode)?)?;
            split = split.max(sum.linf_distance(&rough)?);
        }
    }
    checks.push(Check::at_most(
        "low_plus_high_is_identity",
        split / rough.max_abs(),
        1e-13,
    ));

    let mut deficit = f64::INFINITY;
    for s in [1.0, 2.0, 3.5] {
        deficit = deficit.min(interpolation_check(&rough, s)?);
    }
    checks.push(Check::at_most("interpolation_inequality", -deficit, 1e-12));
    Ok(checks)
}

fn oracle_suite() -> Result<Vec<Check>> {
    let g = Grid::new(256, 2.0 * PI)?;
    let sin = Field::from_fn(&g, f64::sin)?;
    let mut checks = vec![Check::at_most(
        "sine_shock_time",
        (shock_time(&sin)? - 1.0 / 3.0).abs(),
        1e-9,
    )];

    let exact = CharacteristicSolution::analytic(f64::sin, f64::cos, 2.0 * PI)?;
    let t = 0.5 * exact.shock_time();
    let control = StepControl {
        t_end: t,
        dt_max: 1e-4,
        ..Default::default()
    };
    let traj = solve(&sin, &ModelParams::burgers(), &control)?;
    let gap = traj.final_field().linf_distance(&exact.field(&g, t)?)?;
    checks.push(Check::at_most("burgers_vs_characteristics", gap, 1e-6));

    checks.push(Check::at_most(
        "peakon_h1_closed_form",
        (peakon_h1_norm_sq(1.0, 1.0, 40.0 * PI) - 2.0).abs(),
        1e-10,
    ));
    let pg = Grid::new(8192, 40.0 * PI)?;
    let sampled = hs_norm_value(&peakon_field(1.0, 1.0, 0.0, &pg)?, 1.0)?.powi(2);
    checks.push(Check::at_most(
        "peakon_h1_sampled",
        (sampled / 2.0 - 1.0).abs(),
        1e-2,
    ));

    let p = ModelParams::camassa_holm(0.5);
    let spectral = solve(&sin, &p, &StepControl::default())?;
    let fd = fd_reference(&sin, &p, StepControl::default().t_end)?;
    checks.push(Check::at_most(
        "ch_vs_finite_difference",
        spectral.final_field().linf_distance(&fd)?,
        1e-3,
    ));
    Ok(checks)
}

fn conservation_suite() -> Result<Vec<Check>> {
    let g = Grid::new(128, 2.0 * PI)?;
    let u0 = smooth_datum(&g)?.scale(0.05);
    let control = StepControl {
        t_end: 0.5,
        ..Default::default()
    };
    let mut checks = Vec::new();
    let members = [
        (u0.clone(), ModelParams::camassa_holm(0.5)),
        (u0.clone(), ModelParams::burgers()),
    ];
    let runs = solve_ensemble(&members, &control, 1)?;
    let names = [("ch_energy", "ch_mean"), ("burgers_l2", "burgers_mean")];
    for (traj, (energy, mean)) in runs.iter().zip(names) {
        let e = traj.energy_series();
        let drift = e.iter().map(|v| (v / e[0] - 1.0).abs()).fold(0.0, f64::max);
        checks.push(Check::at_most(energy, drift, 1e-8));
        let m0 = traj.records[0].mean;
        let md = traj
            .records
            .iter()
            .map(|r| (r.mean - m0).abs())
            .fold(0.0, f64::max);
        checks.push(Check::at_most(mean, md, 1e-12));
    }
    let e = energy_ch(runs[0].final_field(), 0.5);
    checks.push(Check::at_most(
        "ch_energy_oracle",
        (e / energy_ch(&u0, 0.5) - 1.0).abs(),
        1e-8,
    ));

    let parallel = solve_ensemble(&members, &control, 2)?;
    let mut spread: f64 = 0.0;
    for (a, b) in runs.iter().zip(&parallel) {
        spread = spread.max(a.final_field().linf_distance(b.final_field())?);
    }
    checks.push(Check::at_most("parallel_matches_serial", spread, 0.0));
    Ok(checks)
}
