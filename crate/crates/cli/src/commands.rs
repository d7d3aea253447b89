//! The five subcommands. Each returns a JSON report and CSV artifacts and
//! writes nothing itself.

use std::sync::Arc;

use fkdegen::boundary::{classify_analytic, classify_origin, default_probe};
use fkdegen::domain::{DomainSpec, Face};
use fkdegen::fk_estimate::{auto_horizon, estimate_elliptic, estimate_parabolic, j_functional, Estimate};
use fkdegen::model::{extension_note, DiffusionModel};
use fkdegen::pde_oracle::{solve, PdeSolution};
use fkdegen::problem::ProblemSpec;
use fkdegen::simulate::simulate_path;
use fkdegen::stopping::{elliptic_obstacle_value, exercise_boundary, lsmc_value, policy_from_pde, LsmcResult};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::config::RunConfig;
use crate::csv_out::{coord_columns, Artifact};
use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Classify,
    Price,
    Exercise,
    Oracle,
    Compare,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Classify => "classify",
            Command::Price => "price",
            Command::Exercise => "exercise",
            Command::Oracle => "oracle",
            Command::Compare => "compare",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Output {
    pub report: Value,
    pub artifacts: Vec<Artifact>,
}

pub fn execute(command: Command, cfg: &RunConfig) -> Result<Output, CliError> {
    match command {
        Command::Classify => classify(cfg),
        Command::Price => price(cfg),
        Command::Exercise => exercise(cfg),
        Command::Oracle => oracle(cfg),
        Command::Compare => compare(cfg),
    }
}

struct Setup {
    model: DiffusionModel,
    domain: DomainSpec,
    spec: ProblemSpec,
    scenario_source: &'static str,
}

fn setup(cfg: &RunConfig) -> Result<Setup, CliError> {
    let model = cfg.build_model()?;
    let domain = cfg.build_domain(&model)?;
    let mut spec = cfg.build_problem(&model)?;
    let mut scenario_source = "config";
    if spec.scenario.is_none() {
        let probe = cfg.classify.probe_b.unwrap_or_else(|| default_probe(&domain));
        spec.scenario = Some(classify_origin(&model, probe)?.scenario);
        scenario_source = "classified";
    }
    spec.check(&domain)?;
    Ok(Setup {
        model,
        domain,
        spec,
        scenario_source,
    })
}

fn header(command: Command, s: &Setup, t: f64, x: &[f64]) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("command".into(), json!(command.name()));
    m.insert("model".into(), json!(s.model.name));
    m.insert("kind".into(), json!(s.spec.kind));
    m.insert("variant".into(), json!(s.spec.variant));
    m.insert("scenario".into(), json!(s.spec.scenario));
    m.insert("scenario_source".into(), json!(s.scenario_source));
    m.insert("t".into(), json!(t));
    m.insert("x".into(), json!(x));
    m.insert("extension_note".into(), json!(extension_note(&s.model)));
    m
}

fn merge(into: &mut Map<String, Value>, v: impl Serialize) {
    if let Value::Object(o) = serde_json::to_value(v).expect("reports serialize") {
        into.extend(o);
    }
}

fn estimate_at(s: &Setup, t: f64, x: &[f64], cfg: &RunConfig) -> Result<Estimate, CliError> {
    Ok(if s.spec.kind.is_parabolic() {
        estimate_parabolic(&s.model, &s.domain, &s.spec, t, x, &cfg.sim)?
    } else {
        estimate_elliptic(&s.model, &s.domain, &s.spec, x, &cfg.sim)?
    })
}

fn lsmc_at(s: &Setup, t: f64, x: &[f64], cfg: &RunConfig) -> Result<LsmcResult, CliError> {
    Ok(if s.spec.kind.is_parabolic() {
        lsmc_value(&s.model, &s.domain, &s.spec, t, x, &cfg.sim, &cfg.lsmc)?
    } else {
        elliptic_obstacle_value(&s.model, &s.domain, &s.spec, x, &cfg.sim, &cfg.lsmc)?
    })
}

/// `paths.csv`: `path_id, k, t, x_1..x_d, discount, flag`.
fn dump_paths(s: &Setup, t: f64, x: &[f64], cfg: &RunConfig) -> Result<Option<Artifact>, CliError> {
    let n = cfg.output.dump_paths;
    if n == 0 {
        return Ok(None);
    }
    let horizon = if s.spec.kind.is_parabolic() {
        s.spec.terminal_time()?
    } else {
        t + auto_horizon(&s.model, &s.domain, &s.spec, x, &cfg.sim)?
    };
    let sim = cfg.sim.for_scenario(s.spec.scenario);
    let mut head = vec!["path_id".to_string(), "k".into(), "t".into()];
    head.extend(coord_columns(s.model.dim));
    head.extend(["discount".to_string(), "flag".into()]);
    let mut a = Artifact::new("paths.csv", head);
    for i in 0..n {
        let p = simulate_path(&s.model, &s.domain, x, t, horizon, &sim, sim.noise(i as u64))?;
        let last = p.times.len() - 1;
        for k in 0..=last {
            let flag = if k == last {
                match p.lambda_exit.face {
                    Face::Gamma1 { .. } => "gamma1",
                    Face::Horizon => "horizon",
                    Face::Gamma0 => "gamma0",
                }
            } else if p.touch[k] {
                "gamma0"
            } else {
                "interior"
            };
            let mut row = vec![i.to_string(), k.to_string(), crate::csv_out::num(p.times[k])];
            row.extend(p.states[k].iter().map(|v| crate::csv_out::num(*v)));
            row.push(crate::csv_out::num(p.discount[k]));
            row.push(flag.to_string());
            a.rows.push(row);
        }
    }
    Ok(Some(a))
}

fn classify(cfg: &RunConfig) -> Result<Output, CliError> {
    let model = cfg.build_model()?;
    let domain = cfg.build_domain(&model)?;
    let probe = cfg.classify.probe_b.unwrap_or_else(|| default_probe(&domain));
    let c = classify_origin(&model, probe)?;
    let lemma = match classify_analytic(&model) {
        Ok(case) => json!(case),
        Err(fkdegen::Error::MissingHolderData) => Value::Null,
        Err(e) => return Err(e.into()),
    };
    let report = json!({
        "command": "classify",
        "model": model.name,
        "probe_b": probe,
        "S": c.s0,
        "M": c.m0,
        "Sigma": c.sigma0,
        "N": c.n0,
        "label": c.label,
        "scenario": c.scenario,
        "analytic_case": c.analytic_case,
        "analytic_note": c.analytic_note,
        "lemma_case": lemma,
        "extension_note": extension_note(&model),
    });
    Ok(Output {
        report,
        artifacts: Vec::new(),
    })
}

fn price(cfg: &RunConfig) -> Result<Output, CliError> {
    let s = setup(cfg)?;
    if s.spec.kind.is_obstacle() {
        return Err(CliError::config("price handles boundary-value problems; use `exercise` for obstacles".into()));
    }
    let p = cfg.problem()?;
    let est = estimate_at(&s, p.t, &p.x, cfg)?;
    let mut report = header(Command::Price, &s, p.t, &p.x);
    merge(&mut report, &est);
    let mut artifacts = Vec::new();
    if let Some(sw) = &p.sweep {
        let mut head = vec!["t".to_string()];
        head.extend(coord_columns(s.model.dim));
        head.extend(["mean", "stderr", "ci_low", "ci_high"].map(String::from));
        let mut a = Artifact::new("price_sweep.csv", head);
        let mut rows = Vec::new();
        for v in &sw.values {
            let (mut t, mut x) = (p.t, p.x.clone());
            match sw.axis {
                Some(i) if i < x.len() => x[i] = *v,
                Some(i) => return Err(CliError::config(format!("sweep axis {i} out of range"))),
                None => t = *v,
            }
            let e = estimate_at(&s, t, &x, cfg)?;
            let mut row = vec![t];
            row.extend(&x);
            row.extend([e.mean, e.stderr, e.ci95[0], e.ci95[1]]);
            a.push_numbers(&row);
            rows.push(json!({"t": t, "x": x, "mean": e.mean, "stderr": e.stderr, "ci95": e.ci95}));
        }
        report.insert("sweep".into(), Value::Array(rows));
        artifacts.push(a);
    }
    artifacts.extend(dump_paths(&s, p.t, &p.x, cfg)?);
    Ok(Output {
        report: Value::Object(report),
        artifacts,
    })
}

fn exercise(cfg: &RunConfig) -> Result<Output, CliError> {
    let s = setup(cfg)?;
    if !s.spec.kind.is_obstacle() {
        return Err(CliError::config("exercise needs an obstacle problem".into()));
    }
    let p = cfg.problem()?;
    let r = lsmc_at(&s, p.t, &p.x, cfg)?;
    let mut report = header(Command::Exercise, &s, p.t, &p.x);
    report.insert("value_low".into(), json!(r.estimate.mean));
    report.insert("value_high".into(), json!(r.value_high));
    report.insert("stderr".into(), json!(r.estimate.stderr));
    report.insert("ci95".into(), json!(r.estimate.ci95));
    report.insert("n_paths".into(), json!(r.estimate.n_paths));
    report.insert("dt".into(), json!(r.estimate.dt));
    report.insert("truncation_bias_bound".into(), json!(r.estimate.truncation_bias_bound));
    report.insert("diagnostics".into(), json!(r.estimate.diagnostics));
    report.insert("warnings".into(), json!(r.warnings));
    let mut policy = Map::new();
    merge(&mut policy, r.policy.summary());
    policy.insert("degrees".into(), json!(r.degrees));
    let mut artifacts = Vec::new();
    let mut oracle_report = Value::Null;
    if cfg.exercise.oracle && s.model.dim <= 2 {
        let sol = Arc::new(solve(&s.model, &s.domain, &s.spec, &cfg.oracle)?);
        let fb = exercise_boundary(&sol)?;
        let mut head = vec!["t".to_string()];
        head.extend(coord_columns(s.model.dim));
        let mut a = Artifact::new("exercise_boundary.csv", head);
        for row in &fb {
            a.push_numbers(row);
        }
        artifacts.push(a);
        policy.insert("free_boundary".into(), json!(fb));
        let psi = s.spec.psi.as_ref().expect("checked obstacle spec");
        let rule = policy_from_pde(sol.clone(), psi, cfg.exercise.region_tol)?;
        let j = j_functional(&s.model, &s.domain, &s.spec, p.t, &p.x, &rule, &cfg.sim)?;
        oracle_report = json!({
            "value": sol.value_at(p.t, &p.x),
            "complementarity": sol.complementarity,
            "residual": sol.residual,
            "region_policy": {"mean": j.mean, "stderr": j.stderr, "ci95": j.ci95, "stop_rate": j.diagnostics.stop_rate},
        });
    } else {
        policy.insert("free_boundary".into(), Value::Null);
    }
    report.insert("policy".into(), Value::Object(policy));
    report.insert("oracle".into(), oracle_report);
    artifacts.extend(dump_paths(&s, p.t, &p.x, cfg)?);
    Ok(Output {
        report: Value::Object(report),
        artifacts,
    })
}

/// Index of the slab closest to `t`.
fn slab(sol: &PdeSolution, t: f64) -> usize {
    let mut best = 0;
    for (j, s) in sol.times.iter().enumerate() {
        if (s - t).abs() < (sol.times[best] - t).abs() {
            best = j;
        }
    }
    best
}

fn oracle_summary(sol: &PdeSolution) -> Value {
    json!({
        "nodes": sol.grid.len(),
        "cells": sol.grid.axes.iter().map(|a| a.len() - 1).collect::<Vec<_>>(),
        "time_slabs": sol.times.len(),
        "residual": sol.residual,
        "complementarity": sol.complementarity,
        "iterations": sol.iterations,
        "upwinded_rows": sol.upwinded_rows,
        "grid_scenario": sol.scenario,
    })
}

fn oracle(cfg: &RunConfig) -> Result<Output, CliError> {
    let s = setup(cfg)?;
    let p = cfg.problem()?;
    let sol = solve(&s.model, &s.domain, &s.spec, &cfg.oracle)?;
    let j = slab(&sol, p.t);
    let mut head = coord_columns(s.model.dim);
    head.push("u".into());
    let mut a = Artifact::new("oracle_grid.csv", head);
    for k in 0..sol.grid.len() {
        let mut row = sol.grid.node(k);
        row.push(sol.values[j][k]);
        a.push_numbers(&row);
    }
    let mut report = header(Command::Oracle, &s, p.t, &p.x);
    report.insert("value".into(), json!(sol.value_at(p.t, &p.x)));
    report.insert("slab_time".into(), json!(sol.times[j]));
    merge(&mut report, oracle_summary(&sol));
    Ok(Output {
        report: Value::Object(report),
        artifacts: vec![a],
    })
}

fn compare(cfg: &RunConfig) -> Result<Output, CliError> {
    let s = setup(cfg)?;
    let p = cfg.problem()?;
    let points = if cfg.compare.points.is_empty() {
        vec![p.x.clone()]
    } else {
        cfg.compare.points.clone()
    };
    if let Some(bad) = points.iter().find(|x| x.len() != s.model.dim) {
        return Err(CliError::config(format!("compare point {bad:?} has the wrong dimension")));
    }
    let exact = match &cfg.compare.exact {
        Some(f) => Some(f.build(&s.model, s.spec.kind.is_parabolic(), "compare.exact")?),
        None => None,
    };
    let sol = solve(&s.model, &s.domain, &s.spec, &cfg.oracle)?;
    let mut head = coord_columns(s.model.dim);
    head.extend(["mc", "stderr", "pde", "diff"].map(String::from));
    if exact.is_some() {
        head.push("exact".into());
    }
    let mut a = Artifact::new("compare.csv", head);
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    for x in &points {
        let (mc, se) = if s.spec.kind.is_obstacle() {
            let r = lsmc_at(&s, p.t, x, cfg)?;
            (r.estimate.mean, r.estimate.stderr)
        } else {
            let e = estimate_at(&s, p.t, x, cfg)?;
            (e.mean, e.stderr)
        };
        let pde = sol.value_at(p.t, x);
        let diff = mc - pde;
        worst = worst.max(diff.abs());
        let mut row = x.clone();
        row.extend([mc, se, pde, diff]);
        let mut obj = json!({"x": x, "mc": mc, "stderr": se, "pde": pde, "diff": diff});
        if let Some(u) = &exact {
            let v = u.eval(p.t, x);
            row.push(v);
            obj["exact"] = json!(v);
            obj["mc_error"] = json!(mc - v);
            obj["pde_error"] = json!(pde - v);
        }
        a.push_numbers(&row);
        rows.push(obj);
    }
    let mut report = header(Command::Compare, &s, p.t, &p.x);
    report.insert("rows".into(), Value::Array(rows));
    report.insert("max_abs_diff".into(), json!(worst));
    report.insert("tolerance".into(), json!(cfg.compare.tolerance));
    report.insert("within_tolerance".into(), json!(cfg.compare.tolerance.map(|t| worst <= t)));
    report.insert("oracle".into(), oracle_summary(&sol));
    let mut artifacts = vec![a];
    artifacts.extend(dump_paths(&s, p.t, &p.x, cfg)?);
    Ok(Output {
        report: Value::Object(report),
        artifacts,
    })
}
