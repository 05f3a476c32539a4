use std::f64::consts::PI;

use chlab::dynamics::StepControl;
use chlab::experiments::{InitialDatum, SweepConfig, SweepReport, SweepRuns};
use chlab::io::{
    decode_snapshot, emit_report, encode_snapshot, parse_config, read_snapshot, serialize_config,
    write_snapshot, OutputFormat, ERRORS_HEADER, NORMS_HEADER,
};
use chlab::spectral::{Field, Grid};
use chlab::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn empty_config_gives_defaults() {
    let c = parse_config("").unwrap();
    assert_eq!(c.n_points, 256);
    assert_eq!(c.period, 2.0 * PI);
    assert_eq!(c.alpha, 0.1);
    assert_eq!(c.sobolev_s, 2.0);
    assert_eq!(c.t_end, 0.1);
    assert_eq!(c.u0, InitialDatum::BandLimited);
}

#[test]
fn full_config_parses() {
    let text = "\
# acceptance grid
[grid]
n_points = 512
period = 40*pi

[model]
alpha = 0.05   # filter width
nu = 0.0
dealias = false

[data]
u0 = rough:s=2.5,seed=11

[sweep]
alphas = 0.2, 0.1, 0.05, 0.025
ns = 2, 3, 4
sobolev_s = 2.5

[output]
dir = results
formats = csv, json
";
    let c = parse_config(text).unwrap();
    assert_eq!(c.n_points, 512);
    assert_eq!(c.period, 40.0 * PI);
    assert_eq!(c.alpha, 0.05);
    assert!(!c.dealias);
    assert_eq!(c.u0, InitialDatum::Rough { s: 2.5, seed: 11 });
    assert_eq!(c.alphas, vec![0.2, 0.1, 0.05, 0.025]);
    assert_eq!(c.ns, vec![2, 3, 4]);
    assert_eq!(c.out_dir.to_str(), Some("results"));
    assert!(c.wants(OutputFormat::Json) && !c.wants(OutputFormat::Gnuplot));
}

fn parse_error(text: &str) -> (usize, String) {
    match parse_config(text) {
        Err(Error::Parse { line, message }) => (line, message),
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn alpha_out_of_range_cites_hypothesis() {
    let (line, msg) = parse_error("[model]\nalpha = 1.5\n");
    assert_eq!(line, 2);
    assert!(msg.contains("(0,1)"), "{msg}");
}

#[test]
fn low_sobolev_index_rejected() {
    let (line, msg) = parse_error("[grid]\nn_points = 64\n\n[sweep]\nsobolev_s = 1.2\n");
    assert_eq!(line, 5);
    assert!(msg.contains("s > 3/2"), "{msg}");
}

#[test]
fn unknown_keys_and_sections_rejected() {
    assert_eq!(parse_error("[model]\nalhpa = 0.1\n").0, 2);
    assert_eq!(parse_error("\n[modle]\n").0, 2);
    assert_eq!(parse_error("alpha = 0.1\n").0, 1);
    assert_eq!(parse_error("[time]\nt_end = soon\n").0, 2);
    assert_eq!(parse_error("[data]\nu0 = wave\n").0, 2);
}

#[test]
fn cross_key_constraints_are_located() {
    let (line, msg) = parse_error("[sweep]\nalphas = 0.1, 0.2\n");
    assert_eq!(line, 2, "{msg}");
    let (line, _) = parse_error("[grid]\nn_points = 100\n");
    assert_eq!(line, 2);
}

#[test]
fn serialize_round_trip() {
    let text =
        "[grid]\nperiod = 2pi\n[model]\nalpha = 0\nnu = 0.01\n[data]\nu0 = peakon:c=1,alpha=0.5\n";
    let c = parse_config(text).unwrap();
    let again = parse_config(&serialize_config(&c)).unwrap();
    assert_eq!(again, c);
    assert_eq!(serialize_config(&again), serialize_config(&c));
}

proptest! {
    #[test]
    fn serialize_round_trip_random(
        alpha in 0.0f64..0.99,
        t_end in 1e-3f64..1.0,
        cfl in 0.05f64..0.9,
        seed in 0u64..1000,
        s in 1.6f64..4.0,
    ) {
        let mut c = parse_config("").unwrap();
        c.alpha = alpha;
        c.t_end = t_end;
        c.cfl = cfl;
        c.sobolev_s = s;
        c.u0 = InitialDatum::Rough { s, seed };
        prop_assert_eq!(parse_config(&serialize_config(&c)).unwrap(), c);
    }
}

fn random_field(seed: u64) -> Field {
    let g = Grid::new(128, 3.7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..128).map(|_| rng.gen_range(-1e3..1e3)).collect();
    Field::new(&g, samples)
        .unwrap()
        .with_time(0.0625)
        .with_alpha(0.1)
}

#[test]
fn snapshot_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let f = random_field(5);
    let a = dir.path().join("a.chs");
    let b = dir.path().join("b.chs");
    write_snapshot(&f, &a).unwrap();
    let back = read_snapshot(&a).unwrap();
    assert_eq!(back.samples(), f.samples());
    assert_eq!(back.grid().period(), 3.7);
    assert_eq!(back.time(), Some(0.0625));
    assert_eq!(back.alpha(), Some(0.1));
    write_snapshot(&back, &b).unwrap();
    let (ba, bb) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(ba, bb);
    assert_eq!(ba.len(), 4 + 4 + 8 + 8 + 8 + 8 + 8 * 128);
}

#[test]
fn snapshot_corruption_rejected() {
    let bytes = encode_snapshot(&random_field(1));
    for cut in [0, 10, 39, 40, bytes.len() - 1] {
        assert!(
            matches!(decode_snapshot(&bytes[..cut]), Err(Error::Format(_))),
            "cut {cut}"
        );
    }
    let mut bad = bytes.clone();
    bad[..4].copy_from_slice(b"XXXX");
    match decode_snapshot(&bad) {
        Err(Error::Format(m)) => assert!(m.contains("CHS1"), "{m}"),
        other => panic!("{other:?}"),
    }
    let mut bad = bytes.clone();
    bad[4] = 2;
    assert!(matches!(decode_snapshot(&bad), Err(Error::Format(_))));
    let mut extra = bytes;
    extra.push(0);
    assert!(matches!(decode_snapshot(&extra), Err(Error::Format(_))));
}

#[test]
fn missing_snapshot_reports_path() {
    let err = read_snapshot(std::path::Path::new("/nonexistent/u.chs")).unwrap_err();
    assert!(err.to_string().contains("/nonexistent/u.chs"));
}

#[test]
fn empty_sweep_emits_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let report = SweepReport::empty(&SweepConfig::default());
    let formats = [OutputFormat::Csv, OutputFormat::Json, OutputFormat::Gnuplot];
    emit_report(&report, &[], dir.path(), &formats).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("errors.csv")).unwrap();
    assert_eq!(csv, format!("{ERRORS_HEADER}\n"));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap())
            .unwrap();
    assert!(json["verdicts"].as_array().unwrap().is_empty());
    assert!(dir.path().join("plot.gp").exists());
}

#[test]
fn sweep_artifacts_match_runs() {
    let cfg = SweepConfig {
        datum: InitialDatum::Rough { s: 2.0, seed: 2 },
        n_points: 64,
        alphas: vec![0.2],
        ns: vec![2],
        control: StepControl {
            t_end: 0.01,
            ..Default::default()
        },
        ..Default::default()
    };
    let runs = SweepRuns::run(&cfg).unwrap();
    let report = chlab::experiments::report_from_runs(&runs).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let series = runs.series();
    emit_report(
        &report,
        &series,
        dir.path(),
        &[OutputFormat::Csv, OutputFormat::Json],
    )
    .unwrap();

    let snapshots = runs.full[1].fields().len();
    let text = std::fs::read_to_string(dir.path().join("norms_u0_alpha0.2.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(NORMS_HEADER));
    assert_eq!(lines.count(), snapshots);

    let csv = std::fs::read_to_string(dir.path().join("errors.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("0.2,,2,"));
    assert!(rows[1].starts_with("0.2,2,2,"));
    for field in rows[0].split(',').skip(3).take(2) {
        let v: f64 = field.parse().unwrap();
        assert_eq!(v.to_string(), field);
    }

    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap())
            .unwrap();
    let names: Vec<&str> = json["verdicts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v["name"].as_str().unwrap())
        .collect();
    let expected: Vec<String> = report.verdicts.iter().map(|v| v.name.clone()).collect();
    assert_eq!(names, expected);
    assert!(!dir.path().join("plot.gp").exists());
}
