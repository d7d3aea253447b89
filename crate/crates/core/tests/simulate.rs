use fkdegen::boundary::{expected_exit_time, hitting_prob};
use fkdegen::domain::{DomainSpec, Face};
use fkdegen::expr::Expr;
use fkdegen::model::{cir1d, heston, DiffusionModel, GridSpec};
use fkdegen::rng::{GaussianNoise, ZeroNoise};
use fkdegen::simulate::{compute_m, discount_weight, envelope_profile, interval_exit, simulate_path, SimConfig};
use fkdegen::Error;

fn driftless(c: f64) -> DiffusionModel {
    let mut m = cir1d(1.0, 0.2, 1.0, c).unwrap();
    m.drift = vec![Expr::constant(0.0)];
    m
}

#[test]
fn constant_killing_discount_is_exact() {
    let m = heston(2.0, 0.09, 0.3, -0.5, 0.05, 0.07).unwrap();
    let dom = DomainSpec::half_space(2);
    let cfg = SimConfig::default();
    let p = simulate_path(&m, &dom, &[0.0, 0.09], 0.5, 2.5, &cfg, GaussianNoise::new(1, 0)).unwrap();
    for s in [0.5, 0.73, 1.0, 2.0, 2.5] {
        let want = (-0.07f64 * (s - 0.5)).exp();
        assert!((discount_weight(&p, s) - want).abs() < 1e-12);
    }
    assert_eq!(p.lambda_exit.face, Face::Horizon);
    assert!((p.lambda_exit.time - 2.5).abs() < 1e-12);
}

#[test]
fn zero_noise_follows_euler_and_discount_converges() {
    // drift kappa (theta - y), killing 1 + y: compare with the exact ODE
    let (kappa, theta, y0, t_end): (f64, f64, f64, f64) = (1.5, 0.3, 0.8, 1.0);
    let mut m = cir1d(kappa, theta, 0.5, 1.0).unwrap();
    m.killing = Expr::affine(1.0, vec![1.0]);
    let dom = DomainSpec::half_space(1);
    let exact_y = theta + (y0 - theta) * (-kappa * t_end).exp();
    let exact_d = (1.0 + theta) * t_end + (y0 - theta) * (1.0 - (-kappa * t_end).exp()) / kappa;
    let mut errs = Vec::new();
    for dt in [0.01, 0.005] {
        let cfg = SimConfig { dt, ..Default::default() };
        let p = simulate_path(&m, &dom, &[y0], 0.0, t_end, &cfg, ZeroNoise).unwrap();
        let y = p.states.last().unwrap()[0];
        assert!((y - exact_y).abs() < 2.0 * dt);
        errs.push((discount_weight(&p, t_end) - (-exact_d).exp()).abs());
    }
    let ratio = errs[0] / errs[1];
    assert!((1.7..2.3).contains(&ratio), "{errs:?}");
}

#[test]
fn paths_are_reproducible() {
    let m = heston(2.0, 0.09, 0.3, -0.5, 0.05, 0.05).unwrap();
    let dom = DomainSpec::new(vec![Some(-2.0), Some(0.0)], vec![Some(2.0), Some(2.0)]).unwrap();
    let cfg = SimConfig::default();
    let a = simulate_path(&m, &dom, &[0.0, 0.25], 0.0, 5.0, &cfg, GaussianNoise::new(9, 4)).unwrap();
    let b = simulate_path(&m, &dom, &[0.0, 0.25], 0.0, 5.0, &cfg, GaussianNoise::new(9, 4)).unwrap();
    let c = simulate_path(&m, &dom, &[0.0, 0.25], 0.0, 5.0, &cfg, GaussianNoise::new(9, 5)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.states, c.states);
}

#[test]
fn exit_point_lies_on_gamma1() {
    let m = cir1d(1.0, 0.2, 1.0, 0.05).unwrap();
    let dom = DomainSpec::new(vec![Some(0.0)], vec![Some(0.5)]).unwrap();
    let cfg = SimConfig::default();
    for i in 0..50 {
        let p = simulate_path(&m, &dom, &[0.3], 0.0, 100.0, &cfg, GaussianNoise::new(3, i)).unwrap();
        if let Face::Gamma1 { axis, upper } = p.lambda_exit.face {
            assert_eq!((axis, upper), (0, true));
            assert_eq!(p.lambda_exit.point, vec![0.5]);
        }
        assert!(p.states.iter().all(|x| x[0] >= 0.0));
        assert!(p.tau_exit.time <= p.lambda_exit.time);
    }
}

#[test]
fn start_outside_is_rejected() {
    let m = cir1d(1.0, 0.2, 1.0, 0.05).unwrap();
    let dom = DomainSpec::new(vec![Some(0.0)], vec![Some(0.5)]).unwrap();
    let r = simulate_path(&m, &dom, &[0.7], 0.0, 1.0, &SimConfig::default(), ZeroNoise);
    assert!(matches!(r, Err(Error::OutOfDomain(_))));
}

#[test]
fn envelope_constant_driftless() {
    // c y^2 - (p y^2 + y) with p = c/2 has minimum -1/(2c) at y = 1/c
    let c = 0.5;
    let m = driftless(c);
    let grid = GridSpec {
        lower: vec![0.0],
        upper: vec![4.0],
        points_per_axis: 4001,
    };
    let e = compute_m(&m, &grid, Some(c / 2.0)).unwrap();
    assert!((e.m - 1.0 / (2.0 * c)).abs() < 1e-9, "{}", e.m);
    assert!((e.argmin[0] - 2.0).abs() < 1e-9);
}

#[test]
fn envelope_flags_weak_killing() {
    let m = heston(2.0, 0.09, 0.3, -0.5, 0.05, 0.05).unwrap();
    let r = compute_m(&m, &m.default_grid(), None);
    assert!(matches!(r, Err(Error::ConditionLikelyViolated(_))), "{r:?}");
}

#[test]
fn envelope_is_supermartingale_for_strong_killing() {
    let m = cir1d(1.0, 0.2, 0.5, 3.0).unwrap();
    let e = compute_m(&m, &m.default_grid(), None).unwrap();
    let cfg = SimConfig {
        n_paths: 4000,
        dt: 0.005,
        ..Default::default()
    };
    let prof = envelope_profile(&m, &[0.5], &[0.0, 0.25, 0.5, 1.0], e.m, &cfg).unwrap();
    for w in prof.windows(2) {
        assert!(w[1].increment <= 3.0 * w[1].increment_stderr, "{prof:?}");
    }
}

#[test]
fn interval_exit_matches_scale_and_speed() {
    let m = cir1d(1.0, 0.2, 1.0, 0.05).unwrap();
    let (a, y, b) = (0.05, 0.4, 1.0);
    let mc = interval_exit(&m, a, y, b, 1e-3, 20_000, 11, None).unwrap();
    let p = hitting_prob(&m, a, y, b).unwrap();
    let v = expected_exit_time(&m, a, y, b).unwrap();
    assert!((mc.p_upper - p).abs() <= 3.0 * mc.p_stderr + 2e-3, "{} vs {p}", mc.p_upper);
    assert!((mc.mean_time - v).abs() <= 3.0 * mc.time_stderr + 5e-3 * v, "{} vs {v}", mc.mean_time);
}
