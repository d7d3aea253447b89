use std::sync::Arc;

use fkdegen::boundary::Scenario;
use fkdegen::domain::DomainSpec;
use fkdegen::expr::Expr;
use fkdegen::fk_estimate::{estimate_parabolic, j_functional};
use fkdegen::model::{cir1d, gbm1d};
use fkdegen::pde_oracle::{solve, solve_obstacle, OracleConfig, PdeSolution};
use fkdegen::problem::{ProblemSpec, ScalarField};
use fkdegen::simulate::SimConfig;
use fkdegen::stopping::{check_free_boundary, exercise_boundary, lsmc_value, monomials, policy_from_pde, LsmcConfig};
use fkdegen::Error;

fn konst(v: f64) -> ScalarField {
    ScalarField::expr(Expr::constant(v), v.abs())
}

fn put(k: f64) -> ScalarField {
    ScalarField::expr(Expr::positive_part(Expr::affine(k, vec![-1.0])), k)
}

fn put_spec(k: f64) -> ProblemSpec {
    ProblemSpec::parabolic(ScalarField::zero(), put(k), 1.0).with_obstacle(put(k))
}

fn put_oracle(k: f64, cells: usize) -> PdeSolution {
    let m = gbm1d(0.05, 0.2, 0.05).unwrap();
    let dom = DomainSpec::new(vec![Some(0.0)], vec![None]).unwrap();
    let cfg = OracleConfig {
        cells: vec![cells],
        time_steps: 200,
        rannacher_steps: 2,
        ..Default::default()
    };
    solve_obstacle(&m, &dom, &put_spec(k), &cfg).unwrap()
}

fn unit_interval() -> DomainSpec {
    DomainSpec::new(vec![Some(0.0)], vec![Some(1.0)]).unwrap()
}

#[test]
fn monomial_basis_sizes() {
    assert_eq!(monomials(1, 5).len(), 6);
    assert_eq!(monomials(2, 3).len(), 10);
    assert_eq!(monomials(3, 2).len(), 10);
    assert_eq!(monomials(2, 3)[0], vec![0, 0]);
}

#[test]
fn dominant_constant_obstacle_stops_at_once() {
    let m = cir1d(1.0, 0.2, 0.5, 0.2).unwrap();
    let spec = ProblemSpec::parabolic(konst(0.0), konst(0.5), 1.0)
        .with_scenario(Scenario::A)
        .with_obstacle(konst(0.5));
    let cfg = SimConfig {
        n_paths: 2000,
        ..Default::default()
    };
    let lsmc = LsmcConfig {
        n_train: 2000,
        dates: 10,
        ..Default::default()
    };
    let r = lsmc_value(&m, &unit_interval(), &spec, 0.0, &[0.3], &cfg, &lsmc).unwrap();
    assert!((r.estimate.mean - 0.5).abs() < 1e-12, "{}", r.estimate.mean);
    assert_eq!(r.estimate.diagnostics.stop_rate, 1.0);
    assert!((r.value_high - 0.5).abs() < 1e-12);
}

#[test]
fn negative_obstacle_reduces_to_plain_problem() {
    let m = cir1d(1.0, 0.2, 0.5, 0.2).unwrap();
    let base = ProblemSpec::parabolic(konst(0.1), ScalarField::expr(Expr::coord(0), 1.0), 1.0).with_scenario(Scenario::A);
    let spec = base.clone().with_obstacle(konst(-1.0));
    let cfg = SimConfig {
        n_paths: 4000,
        ..Default::default()
    };
    let lsmc = LsmcConfig {
        n_train: 2000,
        dates: 10,
        ..Default::default()
    };
    let r = lsmc_value(&m, &unit_interval(), &spec, 0.0, &[0.3], &cfg, &lsmc).unwrap();
    assert_eq!(r.estimate.diagnostics.stop_rate, 0.0);
    assert_eq!(r.policy.summary().fitted_dates, 0);
    let plain = estimate_parabolic(&m, &unit_interval(), &base, 0.0, &[0.3], &cfg).unwrap();
    let se = (r.estimate.stderr.powi(2) + plain.stderr.powi(2)).sqrt();
    assert!((r.estimate.mean - plain.mean).abs() <= 4.0 * se);
}

#[test]
fn american_put_policies_bracket_the_oracle() {
    let m = gbm1d(0.05, 0.2, 0.05).unwrap();
    let dom = DomainSpec::new(vec![Some(0.0)], vec![None]).unwrap();
    let spec = put_spec(1.0);
    let sol = Arc::new(put_oracle(1.0, 800));
    let v = sol.value_at(0.0, &[1.0]);
    let cfg = SimConfig {
        n_paths: 20_000,
        ..Default::default()
    };
    // the oracle's own exercise rule is near optimal
    let region = policy_from_pde(sol.clone(), &put(1.0), None).unwrap();
    let e = j_functional(&m, &dom, &spec, 0.0, &[1.0], &region, &cfg).unwrap();
    assert!((e.mean - v).abs() <= 3.0 * e.stderr + 2e-3, "{} vs {v}", e.mean);
    let lsmc = LsmcConfig {
        n_train: 20_000,
        ..Default::default()
    };
    let r = lsmc_value(&m, &dom, &spec, 0.0, &[1.0], &cfg, &lsmc).unwrap();
    // a suboptimal rule cannot beat the value
    assert!(r.estimate.mean <= v + 3.0 * r.estimate.stderr, "{} vs {v}", r.estimate.mean);
    assert!(r.estimate.mean >= v - 3.0 * r.estimate.stderr - 3e-3, "{} vs {v}", r.estimate.mean);
    assert!(r.warnings.is_empty(), "{:?}", r.warnings);
}

#[test]
fn region_policy_needs_an_obstacle_solution() {
    let m = gbm1d(0.05, 0.2, 0.05).unwrap();
    let dom = DomainSpec::new(vec![Some(0.0)], vec![None]).unwrap();
    let plain = solve(&m, &dom, &ProblemSpec::parabolic(ScalarField::zero(), put(1.0), 1.0), &OracleConfig::default()).unwrap();
    assert!(matches!(
        policy_from_pde(Arc::new(plain), &put(1.0), None),
        Err(Error::MissingField(_))
    ));
}

#[test]
fn put_exercise_boundary() {
    let coarse = put_oracle(1.0, 200);
    let fine = put_oracle(1.0, 400);
    let b = exercise_boundary(&fine).unwrap();
    let at0: Vec<f64> = b.iter().filter(|r| r[0] == 0.0).map(|r| r[1]).collect();
    assert_eq!(at0.len(), 1, "{at0:?}");
    // binomial tree (4000 steps) puts the critical price near 0.81
    assert!((0.79..0.83).contains(&at0[0]), "{at0:?}");
    let moved = check_free_boundary(&coarse, &fine).unwrap();
    assert!(moved <= 2.0);
    // a different strike moves the boundary by many cells
    let other = put_oracle(1.2, 400);
    assert!(matches!(check_free_boundary(&coarse, &other), Err(Error::GridTooCoarse(_))));
}

#[test]
fn ill_conditioned_fits_fall_back_to_lower_degree() {
    let m = gbm1d(0.05, 0.2, 0.05).unwrap();
    let dom = DomainSpec::new(vec![Some(0.0)], vec![None]).unwrap();
    let cfg = SimConfig {
        n_paths: 2000,
        ..Default::default()
    };
    let lsmc = LsmcConfig {
        n_train: 2000,
        dates: 5,
        // standardised degree-1 columns are orthogonal, anything higher is not
        max_condition: 1.5,
        ..Default::default()
    };
    let r = lsmc_value(&m, &dom, &put_spec(1.0), 0.0, &[1.0], &cfg, &lsmc).unwrap();
    assert!(!r.warnings.is_empty());
    assert!(r.degrees.iter().all(|d| *d <= 1), "{:?}", r.degrees);
    let strict = LsmcConfig {
        max_condition: 0.5,
        ..lsmc
    };
    assert!(matches!(
        lsmc_value(&m, &dom, &put_spec(1.0), 0.0, &[1.0], &cfg, &strict),
        Err(Error::RegressionIllConditioned { .. })
    ));
}
