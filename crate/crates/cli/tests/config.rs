use std::path::PathBuf;

use fkdegen_cli::config::apply_override;
use fkdegen_cli::{resolve_threads, RunConfig};
use serde_json::json;

fn fixtures() -> Vec<PathBuf> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let mut v: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

#[test]
fn fixtures_round_trip() {
    let all = fixtures();
    assert!(all.len() >= 9);
    for p in all {
        let cfg = RunConfig::load(&p, &[]).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        let again = RunConfig::parse(&cfg.to_json(), &[]).unwrap();
        assert_eq!(cfg, again, "{}", p.display());
    }
}

#[test]
fn overrides_patch_nested_fields() {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/american_put.json");
    let cfg = RunConfig::load(&p, &["sim.dt=0.001".into(), "oracle.cells=[50]".into(), "problem.x.0=0.9".into()]).unwrap();
    assert_eq!(cfg.sim.dt, 0.001);
    assert_eq!(cfg.oracle.cells, vec![50]);
    assert_eq!(cfg.problem().unwrap().x, vec![0.9]);
}

#[test]
fn override_syntax() {
    let mut v = json!({"a": {"b": [1, 2]}, "s": 3});
    apply_override(&mut v, "a.b.1=7").unwrap();
    apply_override(&mut v, "a.c.d=\"x\"").unwrap();
    apply_override(&mut v, "name=plain").unwrap();
    assert_eq!(v, json!({"a": {"b": [1, 7], "c": {"d": "x"}}, "s": 3, "name": "plain"}));
    assert!(apply_override(&mut v, "no-equals").is_err());
    assert!(apply_override(&mut v, "a..b=1").is_err());
    assert!(apply_override(&mut v, "a.b.9=1").is_err());
    assert!(apply_override(&mut v, "s.t=1").is_err());
}

#[test]
fn errors_name_the_field() {
    let text = r#"{"model": {"preset": "cir1d"}, "sim": {"n_paths": "many"}}"#;
    let e = RunConfig::parse(text, &[]).unwrap_err();
    assert_eq!(e.category, "config/invalid");
    assert_eq!(e.exit_code, 2);
    assert!(e.message.contains("sim.n_paths"), "{}", e.message);

    let e = RunConfig::parse(r#"{"model": {"preset": "cir1d", "colour": 1}}"#, &[]).unwrap_err();
    assert!(e.message.contains("colour"), "{}", e.message);

    let e = RunConfig::parse("{\n  \"model\": ,\n}", &[]).unwrap_err();
    assert!(e.message.starts_with("line 2"), "{}", e.message);
}

#[test]
fn field_needs_exactly_one_source() {
    let base = r#"{"model": {"preset": "cir1d"}, "problem": {"kind": "elliptic_bvp", "x": [0.5], "f": FIELD, "g": {"constant": 1.0}}}"#;
    let two = base.replace("FIELD", r#"{"constant": 1, "expr": {"kind": "const", "value": 1.0}, "growth_k": 1}"#);
    let cfg = RunConfig::parse(&two, &[]).unwrap();
    let m = cfg.build_model().unwrap();
    assert!(cfg.build_problem(&m).is_err());
}

#[test]
fn thread_flag_beats_environment() {
    assert_eq!(resolve_threads(Some(3), Some("5")).unwrap(), Some(3));
    assert_eq!(resolve_threads(None, Some("5")).unwrap(), Some(5));
    assert_eq!(resolve_threads(None, Some(" ")).unwrap(), None);
    assert_eq!(resolve_threads(None, None).unwrap(), None);
    assert!(resolve_threads(None, Some("0")).is_err());
    assert!(resolve_threads(None, Some("four")).is_err());
}
