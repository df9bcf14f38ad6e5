//! Behavioral checks for each subcommand: printed values, error paths and
//! exit codes, and agreement between the CSV and JSON emissions.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn ncs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ncs"))
        .args(args)
        .output()
        .expect("could not launch the ncs binary")
}

fn scenario(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
        .display()
        .to_string()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn write_fixture(dir: &tempfile::TempDir, name: &str, text: &str) -> String {
    let path = dir.path().join(name);
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

const DOUBLE_INTEGRATOR_H1: &str = r#"
case_id = "0b"
h = 1.0
x0 = [1.0, 0.0]

[plant]
a = [[0.0, 1.0], [0.0, 0.0]]
b = [[0.0], [1.0]]
c = [[1.0, 0.0], [0.0, 1.0]]

[delay]
kind = "constant"
tau_sc = 0.0625
tau_ca = 0.0625

[loss]
p_sc = 0.0
p_ca = 0.0

[strategy_sc]
kind = "zero"

[strategy_ca]
kind = "zero"

[gain]
kind = "designed_lqr"
q = [[1.0, 0.0], [0.0, 1.0]]
r = [[1.0]]
"#;

fn scalar_integrator_fixture(l: f64) -> String {
    format!(
        r#"
case_id = "0a"
h = 1.0
x0 = [1.0]

[plant]
a = [[0.0]]
b = [[1.0]]
c = [[1.0]]

[delay]
kind = "constant"
tau_sc = 0.0
tau_ca = 0.0

[loss]
p_sc = 0.0
p_ca = 0.0

[strategy_sc]
kind = "zero"

[strategy_ca]
kind = "zero"

[gain]
kind = "fixed"
l = [[{l}]]
"#
    )
}

/// Matrix block printed after the `{name} (RxC)` heading, one row per line.
fn matrix_block(text: &str, name: &str) -> Vec<Vec<f64>> {
    let mut lines = text.lines();
    let heading = lines
        .find(|l| l.starts_with(&format!("{name} (")))
        .unwrap_or_else(|| panic!("no block named {name} in output"));
    let dims: Vec<usize> = heading
        .trim_start_matches(&format!("{name} ("))
        .trim_end_matches(')')
        .split('x')
        .map(|d| d.parse().unwrap())
        .collect();
    (0..dims[0])
        .map(|_| {
            lines
                .next()
                .unwrap()
                .split_whitespace()
                .map(|v| v.parse().unwrap())
                .collect()
        })
        .collect()
}

#[test]
fn discretize_splits_the_input_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let file = write_fixture(&dir, "di.toml", DOUBLE_INTEGRATOR_H1);
    let out = ncs(&["discretize", &file, "--tau", "0.4"]);
    assert!(out.status.success());
    let text = stdout(&out);
    let gamma0 = matrix_block(&text, "Gamma0");
    assert!((gamma0[0][0] - 0.18).abs() < 1e-11);
    assert!((gamma0[1][0] - 0.6).abs() < 1e-11);
    let gamma = matrix_block(&text, "Gamma");
    assert!((gamma[0][0] - 0.5).abs() < 1e-11);
    assert!((gamma[1][0] - 1.0).abs() < 1e-11);
}

#[test]
fn discretize_defaults_to_zero_delay() {
    let dir = tempfile::tempdir().unwrap();
    let file = write_fixture(&dir, "di.toml", DOUBLE_INTEGRATOR_H1);
    let out = ncs(&["discretize", &file]);
    assert!(out.status.success());
    let gamma1 = matrix_block(&stdout(&out), "Gamma1");
    assert_eq!(gamma1, vec![vec![0.0], vec![0.0]]);
}

#[test]
fn discretize_rejects_missing_file_naming_the_path() {
    let out = ncs(&["discretize", "/definitely/not/here.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("/definitely/not/here.toml"));
}

#[test]
fn discretize_rejects_out_of_range_tau() {
    let dir = tempfile::tempdir().unwrap();
    let file = write_fixture(&dir, "di.toml", DOUBLE_INTEGRATOR_H1);
    let out = ncs(&["discretize", &file, "--tau", "1.5"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("[0, 1]"));
}

#[test]
fn malformed_file_reports_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let file = write_fixture(&dir, "broken.toml", "case_id = \"5\"\nh = 0.5\n");
    let out = ncs(&["simulate", &file, "--steps", "3"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("x0"));
}

#[test]
fn invalid_scenario_lists_every_violation() {
    let dir = tempfile::tempdir().unwrap();
    let bad = scenario("sensor_loss_zero.toml");
    let mut text = std::fs::read_to_string(&bad).unwrap();
    text = text.replace("p_ca = 0.0", "p_ca = 0.2");
    text = text.replace("kind = \"zero\"", "kind = \"previous\"");
    let file = write_fixture(&dir, "bad.toml", &text);
    let out = ncs(&["simulate", &file, "--steps", "3"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("loss.p_ca"), "missing loss violation: {err}");
    assert!(err.contains("strategy_sc"), "missing strategy violation: {err}");
}

#[test]
fn simulate_contracts_under_a_small_radius() {
    // closed-loop radius 0.4: after 100 steps the state is far below 1e-6
    let out = ncs(&[
        "simulate",
        &scenario("delay_free.toml"),
        "--steps",
        "100",
        "--format",
        "json",
    ]);
    assert!(out.status.success());
    let doc: Value = serde_json::from_str(&stdout(&out)).unwrap();
    let x_final = doc["summary"]["x_final"].as_array().unwrap();
    let norm: f64 = x_final
        .iter()
        .map(|v| v.as_f64().unwrap().powi(2))
        .sum::<f64>()
        .sqrt();
    assert!(norm < 1e-6, "terminal norm {norm} did not contract");
    assert!(doc["summary"]["diverged_at"].is_null());
}

#[test]
fn simulate_csv_and_json_carry_identical_numbers() {
    let file = scenario("estimate_blend.toml");
    let args = ["simulate", &file, "--steps", "50", "--seed", "3"];
    let csv_out = ncs(&args);
    let json_out = ncs(&[&args[..], &["--format", "json"][..]].concat());
    assert!(csv_out.status.success());
    assert!(json_out.status.success());

    let csv_rows: Vec<Vec<f64>> = stdout(&csv_out)
        .lines()
        .skip(1)
        .map(|line| line.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    let doc: Value = serde_json::from_str(&stdout(&json_out)).unwrap();
    let records = doc["records"].as_array().unwrap();
    assert_eq!(csv_rows.len(), records.len());
    for (row, rec) in csv_rows.iter().zip(records) {
        let mut expect = vec![rec["k"].as_f64().unwrap(), rec["t"].as_f64().unwrap()];
        for field in ["x", "y", "u_computed", "u_applied"] {
            expect.extend(
                rec[field]
                    .as_array()
                    .unwrap()
                    .iter()
                    .map(|v| v.as_f64().unwrap()),
            );
        }
        for field in ["tau_sc", "tau_ca", "tau_k", "gamma_sc", "gamma_ca"] {
            expect.push(rec[field].as_f64().unwrap());
        }
        assert_eq!(row, &expect, "CSV row and JSON record disagree");
    }
}

#[test]
fn montecarlo_single_trial_matches_the_run() {
    let file = scenario("sensor_loss_zero.toml");
    let mc = ncs(&[
        "montecarlo",
        &file,
        "--trials",
        "1",
        "--steps",
        "50",
        "--seed",
        "9",
        "--format",
        "json",
    ]);
    let sim = ncs(&[
        "simulate",
        &file,
        "--steps",
        "50",
        "--seed",
        "9",
        "--format",
        "json",
    ]);
    assert!(mc.status.success());
    assert!(sim.status.success());
    let mc_doc: Value = serde_json::from_str(&stdout(&mc)).unwrap();
    let sim_doc: Value = serde_json::from_str(&stdout(&sim)).unwrap();

    let norm2 = |values: &Vec<Value>| -> f64 {
        values
            .iter()
            .map(|v| v.as_f64().unwrap().powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let terminal = mc_doc["terminal_norms"][0].as_f64().unwrap();
    let x_final = sim_doc["summary"]["x_final"].as_array().unwrap();
    assert_eq!(terminal, norm2(x_final));

    let mean = mc_doc["mean_norm"].as_array().unwrap();
    let max = mc_doc["max_norm"].as_array().unwrap();
    let records = sim_doc["records"].as_array().unwrap();
    assert_eq!(mean.len(), records.len());
    for ((m, x), rec) in mean.iter().zip(max).zip(records) {
        let state_norm = norm2(rec["x"].as_array().unwrap());
        assert_eq!(m.as_f64().unwrap(), state_norm);
        assert_eq!(x.as_f64().unwrap(), state_norm);
    }
}

#[test]
fn montecarlo_stable_loop_never_diverges() {
    let out = ncs(&[
        "montecarlo",
        &scenario("constant_delay.toml"),
        "--trials",
        "5",
        "--steps",
        "100",
        "--format",
        "json",
    ]);
    assert!(out.status.success());
    let doc: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(doc["divergent_trials"].as_u64(), Some(0));
    assert!(doc["diverged"]
        .as_array()
        .unwrap()
        .iter()
        .all(Value::is_null));
}

#[test]
fn stability_table_tracks_the_closed_loop_radius() {
    let dir = tempfile::tempdir().unwrap();
    let file = write_fixture(&dir, "unit.toml", &scalar_integrator_fixture(1.0));
    let out = ncs(&["stability", &file, "--tau-grid", "0:1:0.25"]);
    assert!(out.status.success());
    let text = stdout(&out);
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 5);
    // tau = 0: deadbeat loop, radius exactly zero
    assert_eq!(rows[0][0], "0");
    assert_eq!(rows[0][1].parse::<f64>().unwrap(), 0.0);
    assert_eq!(rows[0][2], "true");
    // tau = 0.5: radius sqrt(1/2)
    let rho: f64 = rows[2][1].parse().unwrap();
    assert!((rho - std::f64::consts::FRAC_1_SQRT_2).abs() < 2e-4, "got {rho}");
    assert_eq!(rows[2][2], "true");
}

#[test]
fn stability_flags_a_non_contracting_loop() {
    let dir = tempfile::tempdir().unwrap();
    let file = write_fixture(&dir, "open.toml", &scalar_integrator_fixture(0.0));
    let out = ncs(&["stability", &file, "--tau-grid", "0:1:0.5"]);
    assert!(out.status.success());
    for line in stdout(&out).lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        let rho: f64 = fields[1].parse().unwrap();
        assert!((rho - 1.0).abs() < 1e-4, "open-loop radius should be 1, got {rho}");
        assert_eq!(fields[2], "false", "radius >= 1 must be flagged");
    }
}

#[test]
fn stability_rejects_a_grid_beyond_the_interval() {
    let out = ncs(&[
        "stability",
        &scenario("delay_free.toml"),
        "--tau-grid",
        "0:2:0.5",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let out = ncs(&[
        "stability",
        &scenario("delay_free.toml"),
        "--tau-grid",
        "0:1:0",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn divergence_is_reported_not_failed() {
    // double integrator in open loop with an unstable plant: force runaway
    // via zero gain on an expanding plant
    let dir = tempfile::tempdir().unwrap();
    let text = r#"
case_id = "0a"
h = 1.0
x0 = [1.0]

[plant]
a = [[1.0]]
b = [[1.0]]
c = [[1.0]]

[delay]
kind = "constant"
tau_sc = 0.0
tau_ca = 0.0

[loss]
p_sc = 0.0
p_ca = 0.0

[strategy_sc]
kind = "zero"

[strategy_ca]
kind = "zero"

[gain]
kind = "fixed"
l = [[0.0]]
"#;
    let file = write_fixture(&dir, "runaway.toml", text);
    let out = ncs(&[
        "simulate", &file, "--steps", "200", "--format", "json",
    ]);
    assert!(out.status.success(), "divergence must exit 0");
    let doc: Value = serde_json::from_str(&stdout(&out)).unwrap();
    let at = doc["summary"]["diverged_at"].as_u64().unwrap();
    assert!(at > 0 && at < 200);
    assert_eq!(doc["records"].as_array().unwrap().len(), at as usize);
}
