//! Monte Carlo evaluation of the stochastic representations.
//!
//! Every path contributes
//!
//! ```text
//! e^{-D(theta)} h(theta, X_theta) + int_t^theta e^{-D(s)} f(s, X_s) ds,   D(s) = int_t^s c
//! ```
//!
//! where `theta` is the exit time (`tau` or `lambda`, capped at `T` for
//! parabolic problems) or the first time a stopping rule fires, and `h` is
//! `g` at an exit and `psi` at a stop. Exits win ties.

use serde::{Deserialize, Serialize};

use crate::boundary::Scenario;
use crate::domain::{DomainSpec, Face};
use crate::error::{Error, Result};
use crate::model::{norm2, DiffusionModel};
use crate::problem::{ProblemSpec, Support, Variant};
use crate::rng::NoiseSource;
use crate::simulate::{compute_m, exp_trapezoid, SimConfig, Walker};
use crate::stats::{batched, with_threads, CompensatedSum, Moments};

/// A stopping decision that looks only at the current time and state.
pub trait StoppingRule: Sync {
    fn should_stop(&self, t: f64, x: &[f64]) -> bool;
}

/// Stop as soon as possible.
pub struct Immediately;

impl StoppingRule for Immediately {
    fn should_stop(&self, _: f64, _: &[f64]) -> bool {
        true
    }
}

/// Never stop.
pub struct Never;

impl StoppingRule for Never {
    fn should_stop(&self, _: f64, _: &[f64]) -> bool {
        false
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct Diagnostics {
    /// Fraction of paths that touched `x_d = 0` at least once.
    pub gamma0_touch_rate: f64,
    /// Fraction of elliptic paths still running at the horizon.
    pub horizon_censor_rate: f64,
    /// Fraction of paths ended by the stopping rule.
    pub stop_rate: f64,
    pub mean_stopping_time: f64,
    pub horizon: f64,
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_paths: usize,
    pub ci95: [f64; 2],
    /// Bound on the bias from cutting elliptic paths at the horizon.
    pub truncation_bias_bound: f64,
    pub dt: f64,
    pub diagnostics: Diagnostics,
}

impl Estimate {
    fn exact(v: f64, dt: f64) -> Self {
        Estimate {
            mean: v,
            stderr: 0.0,
            n_paths: 0,
            ci95: [v, v],
            truncation_bias_bound: 0.0,
            dt,
            diagnostics: Diagnostics::default(),
        }
    }
}

pub fn estimate_elliptic(model: &DiffusionModel, domain: &DomainSpec, spec: &ProblemSpec, x: &[f64], cfg: &SimConfig) -> Result<Estimate> {
    run(model, domain, spec, 0.0, x, None, cfg)
}

pub fn estimate_parabolic(model: &DiffusionModel, domain: &DomainSpec, spec: &ProblemSpec, t: f64, x: &[f64], cfg: &SimConfig) -> Result<Estimate> {
    run(model, domain, spec, t, x, None, cfg)
}

/// Value of the stopping functional under `rule`.
pub fn j_functional(
    model: &DiffusionModel,
    domain: &DomainSpec,
    spec: &ProblemSpec,
    t: f64,
    x: &[f64],
    rule: &dyn StoppingRule,
    cfg: &SimConfig,
) -> Result<Estimate> {
    if spec.psi.is_none() {
        return Err(Error::MissingField("psi".into()));
    }
    run(model, domain, spec, t, x, Some(rule), cfg)
}

/// Elliptic horizon: `max(10 / c0, 5 x pilot mean exit time)`, at most `50 / c0`.
pub fn auto_horizon(model: &DiffusionModel, domain: &DomainSpec, spec: &ProblemSpec, x: &[f64], cfg: &SimConfig) -> Result<f64> {
    if let Some(t) = cfg.t_max {
        return Ok(t);
    }
    let cfg = &cfg.for_scenario(spec.scenario);
    let cap = 50.0 / model.c0;
    let pilot = SimConfig {
        seed: cfg.seed ^ 0x9e37_79b9_7f4a_7c15,
        n_paths: 256,
        antithetic: false,
        ..cfg.clone()
    };
    let times = with_threads(cfg.threads, || {
        batched(pilot.n_paths, |range| -> Result<Moments> {
            let mut m = Moments::default();
            for i in range {
                let mut w = Walker::new(model, domain, &pilot, x, 0.0, cap, pilot.noise(i as u64))?;
                loop {
                    let exited = match spec.variant {
                        Variant::Tau => w.tau.is_some(),
                        Variant::Lambda => w.lambda.is_some(),
                    };
                    if exited {
                        break;
                    }
                    w.advance();
                }
                let r = match spec.variant {
                    Variant::Tau => w.tau.as_ref(),
                    Variant::Lambda => w.lambda.as_ref(),
                };
                m.push(r.map_or(cap, |r| r.time));
            }
            Ok(m)
        })
    });
    let mut m = Moments::default();
    for b in times {
        m = m.merge(&b?);
    }
    Ok((10.0 / model.c0).max(5.0 * m.mean).min(cap))
}

/// Contributions of paths `0..n` (no antithetic averaging), in path order.
pub fn path_values(
    model: &DiffusionModel,
    domain: &DomainSpec,
    spec: &ProblemSpec,
    t: f64,
    x: &[f64],
    cfg: &SimConfig,
    n: usize,
) -> Result<Vec<f64>> {
    cfg.check()?;
    let cfg = &cfg.for_scenario(spec.scenario);
    spec.check(domain)?;
    let parabolic = spec.kind.is_parabolic();
    let horizon = if parabolic {
        spec.terminal_time()?
    } else {
        t + auto_horizon(model, domain, spec, x, cfg)?
    };
    let out = with_threads(cfg.threads, || {
        batched(n, |range| -> Result<Vec<f64>> {
            range
                .map(|i| Ok(one_path(model, domain, spec, t, x, horizon, parabolic, None, cfg, cfg.noise(i as u64))?.value))
                .collect()
        })
    });
    let mut v = Vec::with_capacity(n);
    for b in out {
        v.extend(b?);
    }
    Ok(v)
}

/// Bias bound for cutting elliptic paths at `horizon`; infinite when no
/// envelope constant is available.
pub fn truncation_bound(model: &DiffusionModel, domain: &DomainSpec, spec: &ProblemSpec, x: &[f64], horizon: f64, notes: &mut Vec<String>) -> f64 {
    let mut k = spec.f.growth_k.max(spec.g.growth_k);
    if let Some(p) = &spec.psi {
        k = k.max(p.growth_k);
    }
    let c0 = model.c0;
    if let Some(r) = domain.radius() {
        return k * (1.0 + r) * (1.0 + 1.0 / c0) * (-c0 * horizon).exp();
    }
    match compute_m(model, &model.default_grid(), None) {
        Ok(env) => {
            let root = (norm2(x).powi(2) + env.m / c0).sqrt();
            k * ((1.0 + 1.0 / c0) * (-c0 * horizon).exp() + (1.0 + 2.0 / c0) * (-0.5 * c0 * horizon).exp() * root)
        }
        Err(e) => {
            notes.push(format!("no truncation bound: {e}"));
            f64::INFINITY
        }
    }
}

#[derive(Default, Clone, Copy)]
struct PathOutcome {
    value: f64,
    touched: bool,
    censored: bool,
    stopped: bool,
    time: f64,
}

#[derive(Default, Clone, Copy)]
struct Tally {
    values: Moments,
    touched: u64,
    censored: u64,
    stopped: u64,
    time: Moments,
}

impl Tally {
    fn merge(&self, o: &Tally) -> Tally {
        Tally {
            values: self.values.merge(&o.values),
            touched: self.touched + o.touched,
            censored: self.censored + o.censored,
            stopped: self.stopped + o.stopped,
            time: self.time.merge(&o.time),
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn one_path<N: NoiseSource>(
    model: &DiffusionModel,
    domain: &DomainSpec,
    spec: &ProblemSpec,
    t0: f64,
    x0: &[f64],
    horizon: f64,
    parabolic: bool,
    rule: Option<&dyn StoppingRule>,
    cfg: &SimConfig,
    noise: N,
) -> Result<PathOutcome> {
    let mut w = Walker::new(model, domain, cfg, x0, t0, horizon, noise)?;
    let mut running = CompensatedSum::default();
    let mut fx = spec.f.eval(w.t, &w.x);
    let mut e0 = (-w.discount).exp();
    loop {
        let exit = match spec.variant {
            Variant::Tau => w.tau.as_ref(),
            Variant::Lambda => w.lambda.as_ref(),
        };
        if let Some(r) = exit {
            let mut out = PathOutcome {
                touched: w.touches > 0,
                time: r.time - t0,
                ..Default::default()
            };
            let terminal = if r.face == Face::Horizon {
                if parabolic {
                    (-r.discount).exp() * spec.terminal_data().eval(r.time, &r.point)
                } else {
                    out.censored = true;
                    0.0
                }
            } else {
                if r.face == Face::Gamma0 && spec.g.support == Support::Gamma1Only {
                    return Err(Error::BoundaryDataMissing(format!(
                        "a path left through x_d = 0 at {:?} but g is only given on Gamma1",
                        r.point
                    )));
                }
                (-r.discount).exp() * spec.g.eval(r.time, &r.point)
            };
            out.value = terminal + running.value();
            return Ok(out);
        }
        if let (Some(rule), Some(psi)) = (rule, spec.psi.as_ref()) {
            if rule.should_stop(w.t, &w.x) {
                return Ok(PathOutcome {
                    value: (-w.discount).exp() * psi.eval(w.t, &w.x) + running.value(),
                    touched: w.touches > 0,
                    censored: false,
                    stopped: true,
                    time: w.t - t0,
                });
            }
        }
        w.advance();
        let f1 = spec.f.eval(w.t, &w.x);
        let e1 = (-w.discount).exp();
        running.add(exp_trapezoid(w.last_h, w.last_k, e0, e1, fx, f1));
        e0 = e1;
        fx = f1;
    }
}

fn run(
    model: &DiffusionModel,
    domain: &DomainSpec,
    spec: &ProblemSpec,
    t0: f64,
    x: &[f64],
    rule: Option<&dyn StoppingRule>,
    cfg: &SimConfig,
) -> Result<Estimate> {
    cfg.check()?;
    let cfg = &cfg.for_scenario(spec.scenario);
    spec.check(domain)?;
    let parabolic = spec.kind.is_parabolic();
    let mut notes = Vec::new();
    let horizon = if parabolic {
        let t_end = spec.terminal_time()?;
        if t0 > t_end {
            return Err(Error::Config(format!("t = {t0} is past the horizon {t_end}")));
        }
        if t0 == t_end {
            // theta_1 = T <= theta_2, so the terminal datum is paid.
            return Ok(Estimate::exact(spec.terminal_data().eval(t0, x), cfg.dt));
        }
        t_end
    } else {
        t0 + auto_horizon(model, domain, spec, x, cfg)?
    };

    let pair = cfg.antithetic;
    let tallies = with_threads(cfg.threads, || {
        batched(cfg.n_paths, |range| -> Result<Tally> {
            let mut tally = Tally::default();
            let mut prev = 0.0;
            for i in range {
                let o = one_path(model, domain, spec, t0, x, horizon, parabolic, rule, cfg, cfg.noise(i as u64))?;
                if pair {
                    if i % 2 == 0 {
                        prev = o.value;
                    } else {
                        tally.values.push(0.5 * (prev + o.value));
                    }
                } else {
                    tally.values.push(o.value);
                }
                tally.touched += o.touched as u64;
                tally.censored += o.censored as u64;
                tally.stopped += o.stopped as u64;
                tally.time.push(o.time);
            }
            Ok(tally)
        })
    });
    let mut total = Tally::default();
    for t in tallies {
        total = total.merge(&t?);
    }
    let n = cfg.n_paths as f64;
    let touch_rate = total.touched as f64 / n;
    if total.touched > 0 {
        match (spec.scenario, spec.variant) {
            (Some(Scenario::A), Variant::Tau) => notes.push(format!(
                "scenario A: {:.3}% of paths touched x_d = 0, which the exact process never does; these exits are discretization artifacts",
                100.0 * touch_rate
            )),
            (Some(Scenario::B), Variant::Lambda) => notes.push(format!(
                "scheme caveat: lambda variant in scenario B; {:.3}% of paths crossed x_d = 0 without stopping",
                100.0 * touch_rate
            )),
            _ => {}
        }
    }
    let bias = if parabolic {
        0.0
    } else {
        truncation_bound(model, domain, spec, x, horizon - t0, &mut notes)
    };
    let mean = total.values.mean;
    let se = total.values.stderr();
    Ok(Estimate {
        mean,
        stderr: se,
        n_paths: cfg.n_paths,
        ci95: [mean - 1.96 * se, mean + 1.96 * se],
        truncation_bias_bound: bias,
        dt: cfg.dt,
        diagnostics: Diagnostics {
            gamma0_touch_rate: touch_rate,
            horizon_censor_rate: total.censored as f64 / n,
            stop_rate: total.stopped as f64 / n,
            mean_stopping_time: total.time.mean,
            horizon: horizon - t0,
            notes,
        },
    })
}
