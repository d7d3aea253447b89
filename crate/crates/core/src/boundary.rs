//! Feller classification of the origin for the degenerate coordinate.
//!
//! `X^(d)` is a scalar diffusion with drift `mu = b_d` and squared volatility
//! `eta^2(y) = y^beta sigma0(y)^2`. Its scale density is
//! `s(y) = exp(-int_{y0}^y 2 mu / eta^2)` and its speed density is
//! `m = 1 / (eta^2 s)`. Four improper integrals at `0+` decide the boundary:
//!
//! ```text
//! S = int_0^b s                    M = int_0^b m
//! Sigma = int_0^b s(xi) M[xi, b]   N = int_0^b S[xi, b] m(xi)
//! ```
//!
//! Each is summed over dyadic shells `[b 2^-k, b 2^-(k-1)]`. Within a shell
//! the exponent of `s` is carried relative to the shell edge, so even
//! super-exponential scale densities only overflow when the whole integral
//! is astronomically large (which then counts as divergence).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::DiffusionModel;
use crate::quad::{integrate, integrate_log};

pub const K_MAX: usize = 60;
const DIVERGE_LEVEL: f64 = 1e9;
const RATIO_ONE: f64 = 1.0 - 1e-3;
const RATIO_SETTLED: f64 = 1e-2;
const CAUCHY_TOL: f64 = 1e-9;
const EQ_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LimitIntegral {
    S,
    M,
    Sigma,
    N,
}

impl LimitIntegral {
    pub fn name(self) -> &'static str {
        match self {
            LimitIntegral::S => "S",
            LimitIntegral::M => "M",
            LimitIntegral::Sigma => "Sigma",
            LimitIntegral::N => "N",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExtendedReal {
    Finite {
        value: f64,
        error_bound: f64,
        partials: Vec<f64>,
    },
    Divergent {
        partials: Vec<f64>,
    },
}

impl ExtendedReal {
    pub fn is_finite(&self) -> bool {
        matches!(self, ExtendedReal::Finite { .. })
    }

    pub fn value(&self) -> f64 {
        match self {
            ExtendedReal::Finite { value, .. } => *value,
            ExtendedReal::Divergent { .. } => f64::INFINITY,
        }
    }

    pub fn partials(&self) -> &[f64] {
        match self {
            ExtendedReal::Finite { partials, .. } | ExtendedReal::Divergent { partials } => partials,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryLabel {
    Regular,
    Exit,
    NaturalAttracting,
    Entrance,
    NaturalNonAttracting,
}

/// A: the origin is never reached from inside. B: it is reached and needs data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    A,
    B,
}

impl BoundaryLabel {
    pub fn scenario(self) -> Scenario {
        match self {
            BoundaryLabel::Regular | BoundaryLabel::Exit => Scenario::B,
            _ => Scenario::A,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalyticCase {
    A,
    B,
    C,
    D,
    E,
    Unmatched,
}

impl AnalyticCase {
    pub fn scenario(self) -> Option<Scenario> {
        match self {
            AnalyticCase::A | AnalyticCase::B | AnalyticCase::C => Some(Scenario::A),
            AnalyticCase::D | AnalyticCase::E => Some(Scenario::B),
            AnalyticCase::Unmatched => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryClassification {
    pub label: BoundaryLabel,
    pub scenario: Scenario,
    pub probe_b: f64,
    pub s0: ExtendedReal,
    pub m0: Option<ExtendedReal>,
    pub sigma0: Option<ExtendedReal>,
    pub n0: Option<ExtendedReal>,
    pub analytic_case: AnalyticCase,
    pub analytic_note: Option<String>,
}

/// Scale/speed calculus for the degenerate coordinate of a model.
pub struct ScaleSpeed<'a> {
    model: &'a DiffusionModel,
}

impl<'a> ScaleSpeed<'a> {
    pub fn new(model: &'a DiffusionModel) -> Self {
        ScaleSpeed { model }
    }

    fn ratio(&self, y: f64) -> f64 {
        2.0 * self.model.drift_last(y) / self.model.eta2(y)
    }

    /// `int_p^q 2 mu / eta^2` for `p, q > 0` (signed).
    pub fn drift_integral(&self, p: f64, q: f64) -> f64 {
        if p == q {
            return 0.0;
        }
        let (lo, hi, sign) = if p < q { (p, q, 1.0) } else { (q, p, -1.0) };
        let r = if hi / lo > 4.0 {
            integrate_log(|y| self.ratio(y), lo, hi, 1e-300, 1e-13, 200)
        } else {
            integrate(|y| self.ratio(y), lo, hi, 1e-300, 1e-13, 200)
        };
        sign * r.value
    }

    pub fn scale_density(&self, y: f64, y0: f64) -> f64 {
        (-self.drift_integral(y0, y)).exp()
    }

    pub fn speed_density(&self, y: f64, y0: f64) -> f64 {
        self.drift_integral(y0, y).exp() / self.model.eta2(y)
    }

    fn check_pos(y: f64) -> Result<()> {
        if y > 0.0 && y.is_finite() {
            Ok(())
        } else {
            Err(Error::OutOfRange(format!("need 0 < y < inf, got {y}")))
        }
    }

    // Shell [a, a1] quantities, with L1 = L(a1) = int_b^{a1} 2mu/eta^2.

    fn log_s_shell(&self, a: f64, a1: f64, l1: f64, l0: f64) -> f64 {
        // s(x) = exp(-L(x)), L(x) = L1 - int_x^{a1}
        let shift = (-l0).max(-l1);
        let r = integrate_log(|x| (-(l1 - self.drift_integral(x, a1)) - shift).exp(), a, a1, 0.0, 1e-11, 60);
        r.value.ln() + shift
    }

    fn log_m_shell(&self, a: f64, a1: f64, l1: f64, l0: f64) -> f64 {
        let e = |x: f64, l: f64| l - self.model.eta2(x).ln();
        let shift = e(a, l0).max(e(a1, l1));
        let r = integrate_log(
            |x| (l1 - self.drift_integral(x, a1) - shift).exp() / self.model.eta2(x),
            a,
            a1,
            0.0,
            1e-11,
            60,
        );
        r.value.ln() + shift
    }

    /// `int_a^{a1} s(xi) M[xi, a1] dxi` with `s` normalized at `xi`.
    fn sigma_inner(&self, a: f64, a1: f64) -> f64 {
        integrate_log(
            |xi| {
                integrate_log(
                    |x| self.drift_integral(xi, x).exp() / self.model.eta2(x),
                    xi,
                    a1,
                    0.0,
                    1e-11,
                    60,
                )
                .value
            },
            a,
            a1,
            0.0,
            1e-10,
            60,
        )
        .value
    }

    /// `int_a^{a1} S[xi, a1] m(xi) dxi`.
    fn n_inner(&self, a: f64, a1: f64) -> f64 {
        integrate_log(
            |xi| {
                integrate_log(|x| (-self.drift_integral(xi, x)).exp(), xi, a1, 0.0, 1e-11, 100).value
                    / self.model.eta2(xi)
            },
            a,
            a1,
            0.0,
            1e-10,
            100,
        )
        .value
    }
}

enum Verdict {
    Finite(f64, f64),
    Divergent,
    Continue,
}

fn judge(partials: &[f64], incs: &[f64]) -> Result<Verdict> {
    let k = partials.len();
    let p = partials[k - 1];
    if p.is_nan() {
        return Err(Error::QuadratureFailure("NaN partial integral".into()));
    }
    if p.is_infinite() {
        return Ok(Verdict::Divergent);
    }
    if k < 5 {
        return Ok(Verdict::Continue);
    }
    let last = &incs[k - 5..];
    let growing = last[1..].iter().all(|d| *d > 0.0);
    let ratios: Vec<f64> = last.windows(2).map(|w| w[1] / w[0]).collect();
    // Shell increments that stop decaying mean a local exponent <= -1. Only
    // trusted once the ratios have settled: near the probe point the mass of
    // a finite integral can still be building up shell over shell.
    let settled = ratios.windows(2).all(|w| (w[1] - w[0]).abs() <= RATIO_SETTLED * w[1].max(1.0));
    let exploding = p > DIVERGE_LEVEL * partials[0].max(f64::MIN_POSITIVE) && ratios.iter().all(|r| *r >= 1.0);
    if growing && settled && (exploding || ratios.iter().all(|r| *r >= RATIO_ONE)) {
        return Ok(Verdict::Divergent);
    }
    if last[3] == 0.0 && last[4] == 0.0 {
        return Ok(Verdict::Finite(p, 0.0));
    }
    if ratios.iter().all(|r| r.is_finite() && *r >= 0.0 && *r < RATIO_ONE) {
        let tail = |d: f64, r: f64| d * r / (1.0 - r);
        let e1 = p + tail(last[4], ratios[3]);
        let e0 = partials[k - 2] + tail(last[3], ratios[2]);
        let diff = (e1 - e0).abs();
        if diff < CAUCHY_TOL * e1.abs().max(1.0) {
            return Ok(Verdict::Finite(e1, diff + 1e-12 * e1.abs()));
        }
    }
    Ok(Verdict::Continue)
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Decide finiteness of one of the four limit integrals at `0+`, with the
/// scale normalized at `probe_b`.
pub fn limit_integral(which: LimitIntegral, model: &DiffusionModel, probe_b: f64) -> Result<ExtendedReal> {
    ScaleSpeed::check_pos(probe_b)?;
    let ss = ScaleSpeed::new(model);
    let mut partials = Vec::new();
    let mut incs = Vec::new();
    let mut total = 0.0;
    let mut l1 = 0.0;
    let mut log_scum = f64::NEG_INFINITY;
    let mut mcum = 0.0;
    for k in 1..=K_MAX {
        let a1 = probe_b * 0.5f64.powi(k as i32 - 1);
        let a = 0.5 * a1;
        let l0 = l1 - ss.drift_integral(a, a1);
        let inc = match which {
            LimitIntegral::S => ss.log_s_shell(a, a1, l1, l0).exp(),
            LimitIntegral::M => ss.log_m_shell(a, a1, l1, l0).exp(),
            LimitIntegral::Sigma => {
                let s_shell = ss.log_s_shell(a, a1, l1, l0).exp();
                // s(xi) M[xi, b] = s(xi) M[xi, a1] + s(xi) M[a1, b]
                let cross = if mcum == 0.0 || s_shell == 0.0 { 0.0 } else { mcum * s_shell };
                mcum += ss.log_m_shell(a, a1, l1, l0).exp();
                ss.sigma_inner(a, a1) + cross
            }
            LimitIntegral::N => {
                let log_m = ss.log_m_shell(a, a1, l1, l0);
                let cross = if log_scum == f64::NEG_INFINITY { 0.0 } else { (log_scum + log_m).exp() };
                log_scum = log_add(log_scum, ss.log_s_shell(a, a1, l1, l0));
                ss.n_inner(a, a1) + cross
            }
        };
        l1 = l0;
        total += inc;
        incs.push(inc);
        partials.push(total);
        match judge(&partials, &incs)? {
            Verdict::Finite(value, error_bound) => {
                return Ok(ExtendedReal::Finite {
                    value,
                    error_bound,
                    partials,
                })
            }
            Verdict::Divergent => return Ok(ExtendedReal::Divergent { partials }),
            Verdict::Continue => {}
        }
    }
    Err(Error::Inconclusive {
        integral: which.name().into(),
        shells: K_MAX,
    })
}

/// Default probe point: `min(1, half the distance from 0 to Gamma1 along x_d)`.
pub fn default_probe(domain: &crate::domain::DomainSpec) -> f64 {
    match domain.upper.last().copied().flatten() {
        Some(u) => (0.5 * u).min(1.0),
        None => 1.0,
    }
}

/// Classification of the origin from the limit integrals, cross-checked
/// against the analytic lemma.
pub fn classify_origin(model: &DiffusionModel, probe_b: f64) -> Result<BoundaryClassification> {
    let s0 = limit_integral(LimitIntegral::S, model, probe_b)?;
    let (label, m0, sigma0, n0) = if s0.is_finite() {
        let m0 = limit_integral(LimitIntegral::M, model, probe_b)?;
        let sigma0 = limit_integral(LimitIntegral::Sigma, model, probe_b)?;
        if m0.is_finite() {
            let n0 = limit_integral(LimitIntegral::N, model, probe_b)?;
            if !sigma0.is_finite() || !n0.is_finite() {
                return Err(Error::InconsistentClassification(
                    "S and M finite but Sigma or N divergent".into(),
                ));
            }
            (BoundaryLabel::Regular, Some(m0), Some(sigma0), Some(n0))
        } else if sigma0.is_finite() {
            (BoundaryLabel::Exit, Some(m0), Some(sigma0), None)
        } else {
            (BoundaryLabel::NaturalAttracting, Some(m0), Some(sigma0), None)
        }
    } else {
        let n0 = limit_integral(LimitIntegral::N, model, probe_b)?;
        let label = if n0.is_finite() {
            BoundaryLabel::Entrance
        } else {
            BoundaryLabel::NaturalNonAttracting
        };
        (label, None, None, Some(n0))
    };
    let (analytic_case, analytic_note) = match classify_analytic(model) {
        Ok(c) => (c, None),
        Err(e) => (AnalyticCase::Unmatched, Some(e.to_string())),
    };
    if let Some(sc) = analytic_case.scenario() {
        if sc != label.scenario() {
            return Err(Error::InconsistentClassification(format!(
                "limit integrals give {label:?} (scenario {:?}) but the analytic case {analytic_case:?} gives {sc:?}",
                label.scenario()
            )));
        }
    }
    Ok(BoundaryClassification {
        label,
        scenario: label.scenario(),
        probe_b,
        s0,
        m0,
        sigma0,
        n0,
        analytic_case,
        analytic_note,
    })
}

/// Closed-form scenario from `beta`, `b_d(0)` and `sigma0(0)`.
pub fn classify_analytic(model: &DiffusionModel) -> Result<AnalyticCase> {
    let beta = model.beta;
    if beta > 0.0 && beta < 1.0 - EQ_TOL {
        return Ok(AnalyticCase::D);
    }
    let b0 = model.drift_last(0.0);
    if b0 <= EQ_TOL {
        return Ok(AnalyticCase::Unmatched);
    }
    if model.holder.is_none() {
        return Err(Error::MissingHolderData);
    }
    if beta > 1.0 + EQ_TOL && beta <= 2.0 {
        return Ok(AnalyticCase::A);
    }
    if (beta - 1.0).abs() <= EQ_TOL {
        let s = model.sigma0_at(0.0);
        let diff = 2.0 * b0 - s * s;
        return Ok(if diff > EQ_TOL {
            AnalyticCase::B
        } else if diff < -EQ_TOL {
            AnalyticCase::E
        } else if model.sigma0_locally_constant {
            AnalyticCase::C
        } else {
            AnalyticCase::Unmatched
        });
    }
    Ok(AnalyticCase::Unmatched)
}

fn check_interval(a: f64, y: f64, b: f64) -> Result<()> {
    if a > 0.0 && a <= y && y <= b && a < b && b.is_finite() {
        Ok(())
    } else {
        Err(Error::OutOfRange(format!("need 0 < a <= y <= b, got a={a}, y={y}, b={b}")))
    }
}

/// `P_y(T_b < T_a) = S[a, y] / S[a, b]`.
pub fn hitting_prob(model: &DiffusionModel, a: f64, y: f64, b: f64) -> Result<f64> {
    check_interval(a, y, b)?;
    let ss = ScaleSpeed::new(model);
    let s = |x: f64| (-ss.drift_integral(a, x)).exp();
    let num = integrate(s, a, y, 0.0, 1e-12, 200);
    let den = integrate(s, a, b, 0.0, 1e-12, 200);
    if !(num.value.is_finite() && den.value.is_finite()) {
        return Err(Error::QuadratureFailure("scale function overflow".into()));
    }
    Ok(num.value / den.value)
}

/// Expected exit time of `(a, b)` started at `y`.
pub fn expected_exit_time(model: &DiffusionModel, a: f64, y: f64, b: f64) -> Result<f64> {
    check_interval(a, y, b)?;
    let ss = ScaleSpeed::new(model);
    let w = hitting_prob(model, a, y, b)?;
    let upper = integrate(
        |xi| integrate(|x| (-ss.drift_integral(xi, x)).exp(), xi, b, 0.0, 1e-12, 100).value / model.eta2(xi),
        y,
        b,
        0.0,
        1e-11,
        200,
    );
    let lower = integrate(
        |xi| integrate(|x| ss.drift_integral(x, xi).exp(), a, xi, 0.0, 1e-12, 100).value / model.eta2(xi),
        a,
        y,
        0.0,
        1e-11,
        200,
    );
    let v = 2.0 * (w * upper.value + (1.0 - w) * lower.value);
    if !v.is_finite() {
        return Err(Error::QuadratureFailure("exit-time integral overflow".into()));
    }
    Ok(v)
}
