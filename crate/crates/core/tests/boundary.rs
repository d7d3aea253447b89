use fkdegen::boundary::*;
use fkdegen::expr::Expr;
use fkdegen::model::{self, DiffusionModel};

fn driftless() -> DiffusionModel {
    let mut m = model::cir1d(1.0, 0.2, 1.0, 0.05).unwrap();
    m.name = "driftless".into();
    m.drift = vec![Expr::constant(0.0)];
    m
}

#[test]
fn cir_scale_density_closed_form() {
    // kappa = 1, theta = 0.2, sigma = 1: s(y) = (y/y0)^-0.4 exp(2 (y - y0))
    let m = model::cir1d(1.0, 0.2, 1.0, 0.05).unwrap();
    let ss = ScaleSpeed::new(&m);
    for &y in &[1e-6, 1e-3, 0.05, 0.3, 1.0, 2.5] {
        let want = (y / 1.0f64).powf(-0.4) * (2.0 * (y - 1.0)).exp();
        let got = ss.scale_density(y, 1.0);
        assert!((got / want - 1.0).abs() < 1e-8, "y={y}: {got} vs {want}");
        let sp = ss.speed_density(y, 1.0);
        assert!((sp * y * want - 1.0).abs() < 1e-8);
    }
}

#[test]
fn cir_hitting_probability_against_simpson() {
    let m = model::cir1d(1.0, 0.2, 1.0, 0.05).unwrap();
    let s = |x: f64| (x / 0.05f64).powf(-0.4) * (2.0 * (x - 0.05)).exp();
    let simpson = |a: f64, b: f64| {
        let n = 200_000;
        let h = (b - a) / n as f64;
        let mut acc = s(a) + s(b);
        for i in 1..n {
            acc += s(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * h / 3.0
    };
    for &y in &[0.1, 0.4, 0.8] {
        let want = simpson(0.05, y) / simpson(0.05, 1.0);
        let got = hitting_prob(&m, 0.05, y, 1.0).unwrap();
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }
}

#[test]
fn driftless_hitting_and_exit_time() {
    // eta^2 = y, no drift: P = (y-a)/(b-a); v solves y v''/2 = -1.
    let m = driftless();
    let (a, b) = (0.1, 1.0);
    let phi = |y: f64| -2.0 * y * y.ln() + 2.0 * y;
    let c1 = -(phi(b) - phi(a)) / (b - a);
    let c0 = -phi(a) - c1 * a;
    for &y in &[0.2, 0.5, 0.9] {
        let p = hitting_prob(&m, a, y, b).unwrap();
        assert!((p - (y - a) / (b - a)).abs() < 1e-12);
        let v = expected_exit_time(&m, a, y, b).unwrap();
        let want = phi(y) + c1 * y + c0;
        assert!((v - want).abs() < 1e-9 * want.max(1.0), "{v} vs {want}");
    }
}

#[test]
fn interval_arguments_checked() {
    let m = driftless();
    assert!(matches!(hitting_prob(&m, 0.0, 0.5, 1.0), Err(fkdegen::Error::OutOfRange(_))));
    assert!(matches!(expected_exit_time(&m, 0.5, 0.2, 1.0), Err(fkdegen::Error::OutOfRange(_))));
}

#[test]
fn limit_integrals_of_cir_ratio_04() {
    // S = int_0^1 y^-0.4 e^{2(y-1)}, M = int_0^1 y^-0.6 e^{-2(y-1)}
    let m = model::cir1d(1.0, 0.2, 1.0, 0.05).unwrap();
    let simpson_sub = |p: f64, c: f64| {
        // int_0^1 y^-p e^{c(y-1)} dy via substitution y = u^{1/(1-p)}
        let q = 1.0 / (1.0 - p);
        let f = |u: f64| q * (c * (u.powf(q) - 1.0)).exp();
        let n = 200_000;
        let h = 1.0 / n as f64;
        let mut acc = f(0.0) + f(1.0);
        for i in 1..n {
            acc += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * h / 3.0
    };
    let s = limit_integral(LimitIntegral::S, &m, 1.0).unwrap();
    let mm = limit_integral(LimitIntegral::M, &m, 1.0).unwrap();
    assert!((s.value() - simpson_sub(0.4, 2.0)).abs() < 1e-7, "{}", s.value());
    assert!((mm.value() - simpson_sub(0.6, -2.0)).abs() < 1e-7, "{}", mm.value());
}

#[test]
fn analytic_requires_holder_data_when_drift_positive() {
    let mut m = model::cir1d(1.0, 0.2, 1.0, 0.05).unwrap();
    m.holder = None;
    assert_eq!(classify_analytic(&m), Err(fkdegen::Error::MissingHolderData));
    let mut c = model::cev(0.05, 0.3, 0.5, 0.0, 0.05).unwrap();
    c.holder = None;
    assert_eq!(classify_analytic(&c), Ok(AnalyticCase::D));
}

#[test]
fn equality_case_needs_locally_constant_sigma0() {
    let mut m = model::cir1d(0.5, 0.2, 0.2f64.sqrt(), 0.05).unwrap();
    assert_eq!(classify_analytic(&m).unwrap(), AnalyticCase::C);
    m.sigma0_locally_constant = false;
    assert_eq!(classify_analytic(&m).unwrap(), AnalyticCase::Unmatched);
}

fn table() -> Vec<(&'static str, DiffusionModel, BoundaryLabel, AnalyticCase)> {
    use AnalyticCase as C;
    use BoundaryLabel as L;
    vec![
        ("cir-0.4", model::cir1d(1.0, 0.2, 1.0, 0.05).unwrap(), L::Regular, C::E),
        ("cir-1.0", model::cir1d(0.5, 0.2, 0.2f64.sqrt(), 0.05).unwrap(), L::Entrance, C::C),
        ("cir-3.0", model::cir1d(1.5, 0.2, 0.2f64.sqrt(), 0.05).unwrap(), L::Entrance, C::B),
        ("cev-0.5", model::cev(0.05, 0.3, 0.5, 0.0, 0.05).unwrap(), L::Regular, C::D),
        ("cev-1.5", model::cev(0.05, 0.3, 1.5, 0.1, 0.05).unwrap(), L::Entrance, C::A),
        ("heston-b", model::heston(2.0, 0.09, 0.3, -0.5, 0.05, 0.05).unwrap(), L::Entrance, C::B),
        ("heston-c", model::heston(0.5, 0.09, 0.3, -0.5, 0.05, 0.05).unwrap(), L::Entrance, C::C),
        ("heston-e", model::heston(1.0, 0.02, 0.3, -0.5, 0.05, 0.05).unwrap(), L::Regular, C::E),
        ("driftless", driftless(), L::Exit, C::Unmatched),
        ("gbm", model::gbm1d(0.05, 0.2, 0.05).unwrap(), L::NaturalNonAttracting, C::Unmatched),
        ("cir-0.8", model::cir1d(1.0, 0.1, 0.5, 0.05).unwrap(), L::Regular, C::E),
        ("cev-1.25", model::cev(0.05, 0.3, 1.25, 0.1, 0.05).unwrap(), L::Entrance, C::A),
        ("sabr", model::preset("sabr", &Default::default()).unwrap(), L::NaturalAttracting, C::Unmatched),
    ]
}

#[test]
fn classification_table() {
    for (name, m, label, case) in table() {
        let t = std::time::Instant::now();
        let c = classify_origin(&m, 1.0).unwrap_or_else(|e| panic!("{name}: {e}"));
        println!(
            "{name}: {:?} {:?} S={:?} M={:?} Sigma={:?} N={:?} ({:?})",
            c.label,
            c.analytic_case,
            c.s0.value(),
            c.m0.as_ref().map(|v| v.value()),
            c.sigma0.as_ref().map(|v| v.value()),
            c.n0.as_ref().map(|v| (v.value(), v.partials().len())),
            t.elapsed()
        );
        assert_eq!(c.label, label, "{name}");
        assert_eq!(c.analytic_case, case, "{name}");
    }
}

