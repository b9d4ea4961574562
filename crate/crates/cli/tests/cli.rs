use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_xtalk-quant");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn run_env(args: &[&str], key: &str, value: &str) -> Output {
    Command::new(BIN).args(args).env(key, value).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

type Report = (Vec<(String, String)>, Vec<String>, Vec<Vec<String>>);

/// Header pairs, column names and CSV rows of a report.
fn parse_report(text: &str) -> Report {
    let mut header = Vec::new();
    let mut lines = text.lines();
    let mut columns = Vec::new();
    for line in lines.by_ref() {
        if let Some(rest) = line.strip_prefix("# ") {
            let (k, v) = rest.split_once(": ").unwrap();
            header.push((k.to_string(), v.to_string()));
        } else {
            columns = line.split(',').map(String::from).collect();
            break;
        }
    }
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, columns, rows)
}

fn column(columns: &[String], name: &str) -> usize {
    columns.iter().position(|c| c == name).unwrap_or_else(|| panic!("no column {name}"))
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn synthesized_channels_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    let c = dir.path().join("c.json");
    let printed = stdout(&ok(&["synth-channel", "--seed", "5", "--out", path_str(&a)]));
    ok(&["synth-channel", "--seed", "5", "--out", path_str(&b)]);
    ok(&["synth-channel", "--seed", "6", "--out", path_str(&c)]);
    let (a, b, c) = (std::fs::read(a).unwrap(), std::fs::read(b).unwrap(), std::fs::read(c).unwrap());
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert!(printed.contains("tones: 536"), "{printed}");
    assert!(printed.contains("r(f) fit: gamma1"), "{printed}");
}

#[test]
fn inspect_reports_the_fitted_attenuation() {
    let dir = tempfile::tempdir().unwrap();
    let ch = dir.path().join("ch.json");
    ok(&["synth-channel", "--decimation", "40", "--length", "600", "--out", path_str(&ch)]);
    let printed = stdout(&ok(&["inspect-channel", path_str(&ch)]));
    assert!(printed.contains("alpha * length = 3.800000e-3"), "{printed}");
    assert!(printed.contains("users: 10"));
}

#[test]
fn rounding_at_fourteen_bits_stays_below_one_percent() {
    let out = ok(&["analyze", "--bits", "14", "--e2", "rounding"]);
    let (header, columns, rows) = parse_report(&stdout(&out));
    assert!(header.iter().any(|(k, v)| k == "kind" && v == "analyze"));
    let eta = column(&columns, "eta");
    let band: Vec<f64> = rows.iter().filter(|r| r[0] == "band").map(|r| r[eta].parse().unwrap()).collect();
    assert_eq!(band.len(), 10);
    assert!(band.iter().all(|&e| e > 0.0 && e < 0.01), "{band:?}");
}

#[test]
fn analysis_without_errors_loses_nothing_and_repeats_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    ok(&["analyze", "--e2", "zero", "--decimation", "50", "-o", path_str(&a)]);
    ok(&["analyze", "--e2", "zero", "--decimation", "50", "-o", path_str(&b)]);
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    let (_, columns, rows) = parse_report(&text);
    let loss = column(&columns, "loss");
    assert!(rows.iter().all(|r| r[loss].parse::<f64>().unwrap() == 0.0));
}

#[test]
fn bound_columns_fall_with_word_length() {
    let out = ok(&["bound", "--which", "all", "--d-min", "10", "--d-max", "20", "--decimation", "50"]);
    let (_, columns, rows) = parse_report(&stdout(&out));
    assert_eq!(rows.len(), 11);
    for c in 1..columns.len() {
        let values: Vec<f64> = rows.iter().map(|r| r[c].parse().unwrap()).collect();
        assert!(values.windows(2).all(|w| w[1] < w[0]), "{}: {values:?}", columns[c]);
    }
}

#[test]
fn main_bound_below_its_floor_exits_with_code_four() {
    let out = run(&["bound", "--which", "main", "--d-min", "1", "--d-max", "3", "--decimation", "100"]);
    assert_eq!(out.status.code(), Some(4));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("minimum admissible word length of 2 bits"), "{err}");
}

#[test]
fn relative_curve_with_binder_parameters_crosses_one_percent() {
    let args = ["bound", "--which", "relative", "--gamma1", "0.1596", "--gamma2", "3.1729e-8", "--d-min", "12", "--d-max", "16"];
    let (_, _, rows) = parse_report(&stdout(&ok(&args)));
    let curve: Vec<(u32, f64)> = rows.iter().map(|r| (r[0].parse().unwrap(), r[1].parse().unwrap())).collect();
    let first_below = curve.iter().find(|(_, b)| *b <= 0.01).unwrap().0;
    assert_eq!(first_below, 15);
    assert!(curve.iter().any(|&(d, b)| d == 14 && b > 0.01 && b < 0.03));
}

#[test]
fn relative_design_echoes_a_bound_within_target() {
    let out = ok(&["design-bits", "--target-relative", "0.01", "--gamma1", "0.1596", "--gamma2", "3.1729e-8"]);
    let text = stdout(&out);
    let line = text.lines().find(|l| l.starts_with("relative bound at")).unwrap();
    let value: f64 = line.split(": ").nth(1).unwrap().split(" <=").next().unwrap().parse().unwrap();
    assert!(value <= 0.01, "{line}");
}

#[test]
fn tone_design_at_full_rate_reports_the_floor() {
    let out = ok(&["design-bits", "--target-tone", "30", "--freq", "0", "--decimation", "100"]);
    let text = stdout(&out);
    assert!(text.contains("admissible floor 1 bits"), "{text}");
}

#[test]
fn loop_length_sweep_keeps_failing_lengths() {
    let out = ok(&["sweep", "--lengths", "300,600,900,1200", "--gamma1", "0.1596", "--gamma2", "3.1729e-8"]);
    let (header, columns, rows) = parse_report(&stdout(&out));
    assert!(header.iter().any(|(k, v)| k == "kind" && v == "sweep"));
    assert_eq!(rows.len(), 4);
    let error = column(&columns, "error");
    let d_min = column(&columns, "d_min");
    assert!(rows[..2].iter().all(|r| r[error].is_empty() && !r[d_min].is_empty()));
    assert!(rows[2..].iter().all(|r| r[error].contains("not positive")));
}

#[test]
fn zero_error_simulation_loses_nothing() {
    let out = ok(&["simulate", "--trials", "1", "--zero-errors", "--decimation", "50"]);
    let (_, columns, rows) = parse_report(&stdout(&out));
    let loss = column(&columns, "loss");
    assert!(rows.iter().all(|r| r[loss].parse::<f64>().unwrap() == 0.0));
}

#[test]
fn simulated_worst_case_stays_under_the_relative_bound() {
    let out = ok(&["simulate", "--trials", "1000", "--bits", "14", "--e2", "uniform", "--decimation", "26"]);
    let err = String::from_utf8_lossy(&out.stderr);
    let line = err.lines().find(|l| l.starts_with("d = 14")).unwrap();
    let number = |key: &str| -> f64 { line.split(key).nth(1).unwrap().split([' ', ',']).next().unwrap().parse().unwrap() };
    assert!(number("worst eta ") < number("relative bound "), "{line}");
}

#[test]
fn simulation_with_estimation_error_runs() {
    let out = ok(&[
        "simulate", "--trials", "20", "--csi-samples", "1000", "--e2", "uniform", "--trial-bits", "8,14", "--decimation", "50",
    ]);
    let (_, columns, rows) = parse_report(&stdout(&out));
    let d = column(&columns, "d");
    assert!(rows.iter().any(|r| r[d] == "8") && rows.iter().any(|r| r[d] == "14"));
}

#[test]
fn thread_count_does_not_change_reports() {
    let args = ["simulate", "--trials", "30", "--e2", "uniform", "--bits", "11", "--decimation", "60"];
    let one = run_env(&args, "XTALK_THREADS", "1");
    let three = run_env(&args, "XTALK_THREADS", "3");
    assert!(one.status.success() && three.status.success());
    assert_eq!(one.stdout, three.stdout);
    assert_eq!(run_env(&args, "XTALK_THREADS", "0").status.code(), Some(2));
}

#[test]
fn scenario_files_drive_runs_and_flags_override_them() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("scenario.toml");
    std::fs::write(
        &scenario,
        "[channel]\ndecimation = 60\n\n[perturbation]\nd_bits = 12\ne2_model = \"uniform_random\"\nseed = 3\n\n[trials]\nn = 20\n",
    )
    .unwrap();
    let cfg = path_str(&scenario);
    let base = stdout(&ok(&["simulate", "--config", cfg]));
    let (header, columns, rows) = parse_report(&base);
    let d = column(&columns, "d");
    assert!(rows.iter().all(|r| r[d] == "12"));
    let overridden = stdout(&ok(&["simulate", "--config", cfg, "--bits", "13"]));
    let (header2, _, rows2) = parse_report(&overridden);
    assert!(rows2.iter().all(|r| r[d] == "13"));
    let hash = |h: &[(String, String)]| h.iter().find(|(k, _)| k == "scenario_sha256").unwrap().1.clone();
    assert_ne!(hash(&header), hash(&header2));
    assert_eq!(hash(&header).len(), 64);
}

#[test]
fn configuration_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("bad.toml");
    std::fs::write(&scenario, "[channel]\nlenght_m = 300\n").unwrap();
    assert_eq!(run(&["analyze", "--config", path_str(&scenario)]).status.code(), Some(2));
    assert_eq!(run(&["analyze", "--config", "/definitely/missing.toml"]).status.code(), Some(2));
    assert_eq!(run(&["analyze", "--decimation", "0"]).status.code(), Some(2));
    assert_eq!(run(&["bound", "--which", "sideways"]).status.code(), Some(2));
    assert_eq!(run(&["design-bits"]).status.code(), Some(2));
}

#[test]
fn unnormalized_rounding_of_a_large_precoder_exits_with_code_three() {
    let out = run(&["analyze", "--no-normalize", "--decimation", "50"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("outside [-1, 1]"));
}

#[test]
fn corrupt_channel_files_are_configuration_errors() {
    let dir = tempfile::tempdir().unwrap();
    let ch = dir.path().join("broken.json");
    std::fs::write(&ch, "{ \"format\": \"xtalk-matrices\" ").unwrap();
    assert_eq!(run(&["inspect-channel", path_str(&ch)]).status.code(), Some(2));
}

#[test]
fn bundled_scenario_loads() {
    let cfg = concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/binder.toml");
    let out = ok(&["design-bits", "--config", cfg, "--target-relative", "0.01"]);
    assert!(stdout(&out).starts_with("d_min = 15 bits"), "{}", stdout(&out));
}
