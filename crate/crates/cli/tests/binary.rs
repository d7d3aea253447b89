//! End-to-end runs of the `fkdegen` binary with small path counts.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(format!("{name}.json"))
}

fn fkdegen(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_fkdegen"));
    c.args(args).env_remove("FKDEGEN_THREADS");
    for (k, v) in envs {
        c.env(k, v);
    }
    c.output().expect("binary runs")
}

fn report(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn validate(schema: &str, v: &Value) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../docs").join(format!("{schema}.schema.json"));
    let schema: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator.iter_errors(v).map(|e| format!("{} at {}", e, e.instance_path())).collect();
    assert!(errors.is_empty(), "{schema}: {errors:?}");
}

/// Each subcommand on a cheap variant of a fixture.
fn cheap_runs() -> Vec<(&'static str, &'static str, Vec<&'static str>)> {
    vec![
        ("classify", "classify_heston_b", vec![]),
        ("price", "heston_b_tau", vec!["--set", "sim.n_paths=40"]),
        ("price", "telescoping_cir_b", vec!["--set", "sim.n_paths=40"]),
        ("oracle", "cir_conditional_mean", vec!["--set", "oracle.cells=[40]"]),
        ("compare", "cir_conditional_mean", vec!["--set", "sim.n_paths=40", "--set", "oracle.cells=[40]"]),
        (
            "exercise",
            "american_put",
            vec!["--set", "sim.n_paths=100", "--set", "lsmc.n_train=400", "--set", "oracle.cells=[60]", "--set", "oracle.steps=40"],
        ),
    ]
}

fn invoke(cmd: &str, name: &str, extra: &[&str], envs: &[(&str, &str)]) -> Output {
    let cfg = fixture(name);
    let mut args = vec![cmd, "--config", cfg.to_str().unwrap()];
    args.extend_from_slice(extra);
    fkdegen(&args, envs)
}

#[test]
fn reports_match_published_schemas() {
    for (cmd, name, extra) in cheap_runs() {
        let out = invoke(cmd, name, &extra, &[]);
        assert!(out.status.success(), "{cmd} {name}: {}", String::from_utf8_lossy(&out.stderr));
        validate(cmd, &report(&out));
    }
}

#[test]
fn reruns_are_byte_identical() {
    for (cmd, name, extra) in cheap_runs() {
        let a = invoke(cmd, name, &extra, &[]);
        let b = invoke(cmd, name, &extra, &[]);
        assert_eq!(a.stdout, b.stdout, "{cmd} {name}");
    }
}

#[test]
fn thread_count_does_not_change_results() {
    let extra = ["--set", "sim.n_paths=64"];
    let one = invoke("price", "heston_b_tau", &extra, &[("FKDEGEN_THREADS", "1")]);
    let four = invoke("price", "heston_b_tau", &extra, &[("FKDEGEN_THREADS", "4")]);
    let flag = invoke("price", "heston_b_tau", &[&extra[..], &["--threads", "2"]].concat(), &[("FKDEGEN_THREADS", "bogus")]);
    assert!(one.status.success() && four.status.success() && flag.status.success());
    assert_eq!(one.stdout, four.stdout);
    assert_eq!(one.stdout, flag.stdout);

    let bad = invoke("price", "heston_b_tau", &extra, &[("FKDEGEN_THREADS", "bogus")]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn missing_obstacle_exits_2() {
    let out = invoke("exercise", "missing_psi", &[], &[]);
    assert_eq!(out.status.code(), Some(2));
    let e = report(&out);
    validate("error", &e);
    assert_eq!(e["category"], "compatibility/missing-field");
}

#[test]
fn bad_override_exits_2_with_field() {
    let out = invoke("price", "heston_b_tau", &["--set", "sim.dt=\"fast\""], &[]);
    assert_eq!(out.status.code(), Some(2));
    let e = report(&out);
    validate("error", &e);
    assert!(e["message"].as_str().unwrap().contains("sim.dt"));
}

#[test]
fn ill_conditioned_regression_exits_3() {
    let out = invoke(
        "exercise",
        "american_put",
        &["--set", "sim.n_paths=100", "--set", "lsmc.n_train=400", "--set", "lsmc.max_condition=0.5", "--set", "exercise.oracle=false"],
        &[],
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stdout));
    let e = report(&out);
    validate("error", &e);
    assert_eq!(e["category"], "stopping/regression-ill-conditioned");
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let head = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect();
    (head, rows)
}

#[test]
fn artifacts_land_in_out_dir() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = invoke("oracle", "cir_conditional_mean", &["--set", "oracle.cells=[40]", "--out-dir", d], &[]);
    assert!(out.status.success());
    let (head, rows) = read_csv(&dir.path().join("oracle_grid.csv"));
    assert_eq!(head, ["x_1", "u"]);
    assert!(rows.len() > 40);
    let v: f64 = rows[3][1].parse().unwrap();
    assert_eq!(rows[3][1], format!("{v:.16e}"));

    let out = invoke("price", "heston_b_tau", &["--set", "sim.n_paths=20", "--out-dir", d, "--dump-paths", "3"], &[]);
    assert!(out.status.success());
    let (head, rows) = read_csv(&dir.path().join("paths.csv"));
    assert_eq!(head, ["path_id", "k", "t", "x_1", "x_2", "discount", "flag"]);
    let ids: std::collections::BTreeSet<_> = rows.iter().map(|r| r[0].clone()).collect();
    assert_eq!(ids.len(), 3);
    assert!(rows.iter().all(|r| ["interior", "gamma0", "gamma1", "horizon"].contains(&r[6].as_str())));
}

#[test]
fn dump_paths_needs_a_directory() {
    let out = invoke("price", "heston_b_tau", &["--set", "sim.n_paths=20", "--dump-paths", "2"], &[]);
    assert_eq!(out.status.code(), Some(2));
}
