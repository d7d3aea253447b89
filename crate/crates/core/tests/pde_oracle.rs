use fkdegen::boundary::Scenario;
use fkdegen::domain::DomainSpec;
use fkdegen::expr::Expr;
use fkdegen::model::{cir1d, gbm1d, heston};
use fkdegen::pde_oracle::{discretize, solve, solve_elliptic, solve_obstacle, solve_parabolic, Grid, NodeKind, OracleConfig};
use fkdegen::problem::{BoundaryMode, ProblemSpec, ScalarField};
use fkdegen::Error;

fn konst(v: f64) -> ScalarField {
    ScalarField::expr(Expr::constant(v), v.abs())
}

/// `theta e^{-c s} + (x - theta) e^{-(c + kappa) s}` with `s = T - t`.
fn cir_mean(kappa: f64, theta: f64, c: f64, s: f64, x: f64) -> f64 {
    theta * (-c * s).exp() + (x - theta) * (-(c + kappa) * s).exp()
}

#[test]
fn operator_on_constants_gives_killing() {
    let m = heston(2.0, 0.09, 0.3, -0.5, 0.05, 0.05).unwrap();
    let dom = DomainSpec::new(vec![Some(-2.0), Some(0.0)], vec![Some(2.0), Some(2.0)]).unwrap();
    let grid = Grid::build(&m, &dom, BoundaryMode::Partial, &OracleConfig::default()).unwrap();
    let op = discretize(&m, &grid).unwrap();
    let ones = vec![1.0; grid.len()];
    let mut out = vec![0.0; grid.len()];
    op.matrix.mul(&ones, &mut out);
    for k in 0..grid.len() {
        if !op.dirichlet[k] {
            assert!((out[k] - 0.05).abs() < 1e-9, "row {k}: {}", out[k]);
            assert!(op.matrix.off[k].iter().all(|e| e.1 <= 0.0));
        }
    }
    assert!(grid.kinds.contains(&NodeKind::Gamma0));
}

#[test]
fn uniform_stencil_matches_three_point_formula() {
    // gbm: a = s^2 x^2, b = mu x on a uniform grid
    let (mu, s, c) = (0.05, 0.2, 0.05);
    let m = gbm1d(mu, s, c).unwrap();
    let dom = DomainSpec::new(vec![Some(0.0)], vec![Some(2.0)]).unwrap();
    let cfg = OracleConfig {
        cells: vec![20],
        grading: Some(1.0),
        ..Default::default()
    };
    let grid = Grid::build(&m, &dom, BoundaryMode::Partial, &cfg).unwrap();
    let op = discretize(&m, &grid).unwrap();
    let h = 0.1;
    let k = 10;
    let x = 1.0;
    let a = s * s * x * x;
    let row = &op.matrix.off[k];
    let lower = row.iter().find(|e| e.0 == k - 1).unwrap().1;
    let upper = row.iter().find(|e| e.0 == k + 1).unwrap().1;
    assert!((lower - (-a / (2.0 * h * h) + mu * x / (2.0 * h))).abs() < 1e-12);
    assert!((upper - (-a / (2.0 * h * h) - mu * x / (2.0 * h))).abs() < 1e-12);
    assert!((op.matrix.diag[k] - (a / (h * h) + c)).abs() < 1e-12);
}

#[test]
fn constant_solution_is_exact() {
    let m = heston(2.0, 0.09, 0.3, -0.5, 0.05, 0.05).unwrap();
    let dom = DomainSpec::new(vec![Some(-2.0), Some(0.0)], vec![Some(2.0), Some(2.0)]).unwrap();
    let spec = ProblemSpec::elliptic(konst(0.05), konst(1.0)).with_scenario(Scenario::A);
    let sol = solve_elliptic(&m, &dom, &spec, &OracleConfig::default()).unwrap();
    assert!(sol.values[0].iter().all(|v| (v - 1.0).abs() < 1e-10));
    assert!(sol.residual < 1e-10);
}

#[test]
fn parabolic_constant_mode_and_terminal_slice() {
    let c = 0.3;
    let m = cir1d(1.0, 0.2, 0.5, c).unwrap();
    let dom = DomainSpec::new(vec![Some(0.0)], vec![Some(1.0)]).unwrap();
    let g = ScalarField::expr(
        Expr::exp(Expr::sum(vec![Expr::constant(-c * 2.0), Expr::product(vec![Expr::constant(c), Expr::Time])])),
        1.0,
    );
    let spec = ProblemSpec::parabolic(ScalarField::zero(), g, 2.0).with_scenario(Scenario::A);
    let mut errs = Vec::new();
    for steps in [20, 40] {
        let cfg = OracleConfig {
            cells: vec![30],
            time_steps: steps,
            ..Default::default()
        };
        let sol = solve_parabolic(&m, &dom, &spec, &cfg).unwrap();
        assert_eq!(sol.value_at(2.0, &[0.4]), 1.0);
        errs.push((sol.value_at(0.0, &[0.4]) - (-c * 2.0).exp()).abs());
    }
    assert!(errs[0] < 1e-4);
    // second order in time
    assert!(errs[0] / errs[1] > 3.5, "{errs:?}");
}

#[test]
fn cir_conditional_mean_matches_closed_form() {
    let (kappa, theta, c, t_end) = (2.0, 0.09, 0.05, 1.0);
    let m = cir1d(kappa, theta, 0.3, c).unwrap();
    let dom = DomainSpec::new(vec![Some(0.0)], vec![None]).unwrap();
    let spec = ProblemSpec::parabolic(ScalarField::zero(), ScalarField::expr(Expr::coord(0), 1.0), t_end);
    let cfg = OracleConfig {
        far_field: 3.0,
        time_steps: 400,
        ..Default::default()
    };
    let sol = solve_parabolic(&m, &dom, &spec, &cfg).unwrap();
    assert_eq!(sol.scenario, Scenario::A);
    for x in [0.04, 0.09, 0.25] {
        let want = cir_mean(kappa, theta, c, t_end, x);
        let got = sol.value_at(0.0, &[x]);
        assert!((got - want).abs() < 1e-5, "x = {x}: {got} vs {want}");
    }
}

#[test]
fn scenario_a_ignores_gamma0_data() {
    let m = cir1d(1.0, 0.2, 0.5, 0.1).unwrap();
    let dom = DomainSpec::new(vec![Some(0.0)], vec![Some(1.0)]).unwrap();
    let g1 = konst(1.0);
    let g2 = ScalarField::expr(
        Expr::sum(vec![
            Expr::constant(1.0),
            Expr::product(vec![Expr::constant(10.0), Expr::positive_part(Expr::affine(0.5, vec![-1.0]))]),
        ]),
        6.0,
    );
    let f = konst(0.3);
    let a = solve_elliptic(&m, &dom, &ProblemSpec::elliptic(f.clone(), g1).with_scenario(Scenario::A), &OracleConfig::default()).unwrap();
    let b = solve_elliptic(&m, &dom, &ProblemSpec::elliptic(f, g2).with_scenario(Scenario::A), &OracleConfig::default()).unwrap();
    for (p, q) in a.values[0].iter().zip(&b.values[0]) {
        assert!((p - q).abs() < 1e-12);
    }
}

#[test]
fn scenario_b_dirichlet_at_origin() {
    let m = cir1d(1.0, 0.2, 1.0, 0.1).unwrap();
    let dom = DomainSpec::new(vec![Some(0.0)], vec![Some(1.0)]).unwrap();
    let g = ScalarField::expr(Expr::affine(2.0, vec![1.0]), 3.0);
    let sol = solve_elliptic(&m, &dom, &ProblemSpec::elliptic(konst(0.0), g), &OracleConfig::default()).unwrap();
    assert_eq!(sol.scenario, Scenario::B);
    assert_eq!(sol.grid.kinds[0], NodeKind::Gamma0Dirichlet);
    assert_eq!(sol.values[0][0], 2.0);
    assert!((sol.value_at(0.0, &[1e-4]) - 2.0).abs() < 1e-3);
}

#[test]
fn maximum_principle() {
    let m = heston(0.5, 0.09, 0.3, -0.5, 0.05, 0.05).unwrap();
    let dom = DomainSpec::new(vec![Some(-2.0), Some(0.0)], vec![Some(2.0), Some(2.0)]).unwrap();
    let f = ScalarField::expr(Expr::positive_part(Expr::coord(0)), 1.0);
    let g = ScalarField::expr(Expr::positive_part(Expr::affine(0.0, vec![-1.0, 1.0])), 1.0);
    let sol = solve(&m, &dom, &ProblemSpec::elliptic(f, g), &OracleConfig::default()).unwrap();
    assert!(sol.values[0].iter().all(|v| *v >= -1e-14));
}

#[test]
fn heston_manufactured_first_order() {
    let m = heston(2.0, 0.09, 0.3, -0.5, 0.05, 0.05).unwrap();
    let dom = DomainSpec::new(vec![Some(-2.0), Some(0.0)], vec![Some(2.0), Some(2.0)]).unwrap();
    let u = Expr::sum(vec![Expr::constant(1.0), Expr::power(1, 1.0, 2.0)]);
    let spec = ProblemSpec::elliptic(ScalarField::manufactured(&m, u.clone(), false, 10.0), ScalarField::expr(u.clone(), 5.0))
        .with_scenario(Scenario::A);
    let mut errs = Vec::new();
    for n in [20, 40, 80] {
        let cfg = OracleConfig {
            cells: vec![n, n],
            ..Default::default()
        };
        let sol = solve_elliptic(&m, &dom, &spec, &cfg).unwrap();
        let err = (0..sol.grid.len())
            .map(|k| {
                let x = sol.grid.node(k);
                (sol.values[0][k] - u.eval(0.0, &x)).abs()
            })
            .fold(0.0, f64::max);
        errs.push(err);
    }
    // dominated by the one-sided row at v = 0, error about kappa theta h / c
    let order = (errs[1] / errs[2]).log2();
    assert!(errs[2] < 0.1, "{errs:?}");
    assert!(order >= 0.9, "order {order}, errors {errs:?}");
}

#[test]
fn obstacle_inactive_and_constant() {
    let m = cir1d(1.0, 0.2, 0.5, 0.1).unwrap();
    let dom = DomainSpec::new(vec![Some(0.0)], vec![Some(1.0)]).unwrap();
    let base = ProblemSpec::elliptic(konst(0.3), konst(1.0)).with_scenario(Scenario::A);
    let bvp = solve_elliptic(&m, &dom, &base, &OracleConfig::default()).unwrap();
    let obs = solve_obstacle(&m, &dom, &base.clone().with_obstacle(konst(-1e6)), &OracleConfig::default()).unwrap();
    for (p, q) in bvp.values[0].iter().zip(&obs.values[0]) {
        assert!((p - q).abs() < 1e-8);
    }
    assert!(obs.active.as_ref().unwrap().iter().all(|a| !a));

    let flat = ProblemSpec::elliptic(konst(0.0), konst(2.0)).with_scenario(Scenario::A).with_obstacle(konst(2.0));
    let sol = solve_obstacle(&m, &dom, &flat, &OracleConfig::default()).unwrap();
    assert!(sol.values[0].iter().all(|v| (v - 2.0).abs() < 1e-12));
    let active = sol.active.unwrap();
    assert!(sol.grid.kinds.iter().zip(&active).all(|(k, a)| k.is_dirichlet() || *a));
}

fn put_payoff(k: f64) -> ScalarField {
    ScalarField::expr(Expr::positive_part(Expr::affine(k, vec![-1.0])), k)
}

#[test]
fn perpetual_put() {
    let (r, s, k) = (0.05, 0.2, 1.0);
    let m = gbm1d(r, s, r).unwrap();
    let dom = DomainSpec::new(vec![Some(0.0)], vec![None]).unwrap();
    let spec = ProblemSpec::elliptic(ScalarField::zero(), put_payoff(k)).with_obstacle(put_payoff(k));
    let cfg = OracleConfig {
        far_field: 20.0,
        cells: vec![2000],
        ..Default::default()
    };
    let sol = solve_obstacle(&m, &dom, &spec, &cfg).unwrap();
    assert!(sol.complementarity.unwrap() <= 1e-8);
    let gamma = 2.0 * r / (s * s);
    let star = gamma * k / (1.0 + gamma);
    for x in [0.5, 0.8, 1.0, 1.5] {
        let want = if x <= star { k - x } else { (k - star) * (x / star).powf(-gamma) };
        let got = sol.value_at(0.0, &[x]);
        assert!((got - want).abs() < 1e-3, "x = {x}: {got} vs {want}");
    }
}

#[test]
fn american_put_finite_maturity() {
    let (r, s) = (0.05, 0.2);
    let m = gbm1d(r, s, r).unwrap();
    let dom = DomainSpec::new(vec![Some(0.0)], vec![None]).unwrap();
    let spec = ProblemSpec::parabolic(ScalarField::zero(), put_payoff(1.0), 1.0).with_obstacle(put_payoff(1.0));
    let cfg = OracleConfig {
        far_field: 4.0,
        cells: vec![800],
        time_steps: 400,
        rannacher_steps: 2,
        ..Default::default()
    };
    let sol = solve_obstacle(&m, &dom, &spec, &cfg).unwrap();
    let v = sol.value_at(0.0, &[1.0]);
    // binomial reference value for this contract is about 0.06088
    assert!((v - 0.06088).abs() < 5e-4, "{v}");
    assert!(sol.complementarity.unwrap() <= 1e-8);
    let europ = solve(&m, &dom, &ProblemSpec::parabolic(ScalarField::zero(), put_payoff(1.0), 1.0), &cfg).unwrap();
    assert!(europ.value_at(0.0, &[1.0]) < v);
}

#[test]
fn rejects_bad_config() {
    let m = cir1d(1.0, 0.2, 0.5, 0.1).unwrap();
    let dom = DomainSpec::new(vec![Some(0.0)], vec![Some(1.0)]).unwrap();
    let cfg = OracleConfig {
        theta: 0.3,
        ..Default::default()
    };
    let spec = ProblemSpec::parabolic(konst(0.0), konst(1.0), 1.0);
    assert!(matches!(solve_parabolic(&m, &dom, &spec, &cfg), Err(Error::Config(_))));
}
