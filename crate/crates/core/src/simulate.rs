//! Euler-Maruyama paths with full truncation at `x_d = 0`.
//!
//! Coefficients are evaluated at `max(x_d, 0)` and the stored state is
//! projected back to the half-space after every step. Near the degenerate
//! face an outer step is split by `substep_factor`, repeatedly, until a large
//! downward move of `x_d` can no longer reach zero within one sub-step.

use serde::{Deserialize, Serialize};

use crate::domain::{DomainSpec, Face, Location};
use crate::error::{Error, Result};
use crate::model::{norm2, DiffusionModel, GridSpec};
use crate::rng::{GaussianNoise, NoiseSource};
use crate::stats::{batched, with_threads, Moments};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub dt: f64,
    /// Elliptic horizon; chosen automatically when absent.
    pub t_max: Option<f64>,
    pub boundary_tol: f64,
    pub substep_factor: usize,
    pub substep_scale: f64,
    /// How many times a step may be split by `substep_factor` to keep
    /// `x_d` from jumping to zero.
    pub max_refine: usize,
    pub seed: u64,
    pub antithetic: bool,
    pub n_paths: usize,
    pub threads: Option<usize>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 0.01,
            t_max: None,
            boundary_tol: 1e-10,
            substep_factor: 8,
            substep_scale: 1.0,
            max_refine: 8,
            seed: 42,
            antithetic: false,
            n_paths: 10_000,
            threads: None,
        }
    }
}

impl SimConfig {
    /// This configuration with the refinement depth suited to `scenario`.
    pub fn for_scenario(&self, scenario: Option<crate::boundary::Scenario>) -> SimConfig {
        let mut c = self.clone();
        if scenario == Some(crate::boundary::Scenario::B) {
            c.max_refine = c.max_refine.min(ATTAINABLE_REFINE);
        }
        c
    }

    pub fn check(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config("sim.dt must be > 0".into()));
        }
        if self.substep_factor == 0 {
            return Err(Error::Config("sim.substep_factor must be >= 1".into()));
        }
        if self.n_paths == 0 || (self.antithetic && self.n_paths % 2 == 1) {
            return Err(Error::Config("sim.n_paths must be positive (and even with antithetic)".into()));
        }
        if self.t_max.is_some_and(|t| !(t > 0.0)) {
            return Err(Error::Config("sim.t_max must be > 0".into()));
        }
        Ok(())
    }

    /// Noise for path `i`; antithetic pairs share a stream.
    pub fn noise(&self, path: u64) -> GaussianNoise {
        if self.antithetic {
            if path % 2 == 0 {
                GaussianNoise::new(self.seed, path / 2)
            } else {
                GaussianNoise::antithetic(self.seed, path / 2)
            }
        } else {
            GaussianNoise::new(self.seed, path)
        }
    }
}

/// Standard deviations a refined step must keep between `x_d` and zero.
pub const SAFE_SIGMAS: f64 = 8.0;
/// Refinement depth used when `x_d = 0` is attainable and touches are genuine.
pub const ATTAINABLE_REFINE: usize = 1;

/// Reusable scratch for Euler steps.
pub struct Stepper<'a> {
    model: &'a DiffusionModel,
    b: Vec<f64>,
    s: Vec<f64>,
}

impl<'a> Stepper<'a> {
    pub fn new(model: &'a DiffusionModel) -> Self {
        Stepper {
            model,
            b: vec![0.0; model.dim],
            s: vec![0.0; model.dim * model.noise_dim],
        }
    }

    /// `out = x + b dt + sigma sqrt(dt) z`, then `out_d = max(out_d, 0)`.
    pub fn step(&mut self, x: &[f64], dt: f64, z: &[f64], out: &mut [f64]) {
        let (d, m) = (self.model.dim, self.model.noise_dim);
        self.model.drift_into(x, &mut self.b);
        self.model.vol_into(x, &mut self.s);
        let sq = dt.sqrt();
        for i in 0..d {
            let mut dw = 0.0;
            for j in 0..m {
                dw += self.s[i * m + j] * z[j];
            }
            out[i] = x[i] + self.b[i] * dt + sq * dw;
        }
        out[d - 1] = out[d - 1].max(0.0);
    }
}

/// One full-truncation Euler step.
pub fn step(model: &DiffusionModel, x: &[f64], dt: f64, noise: &mut dyn NoiseSource) -> Vec<f64> {
    let mut z = vec![0.0; model.noise_dim];
    noise.fill(&mut z);
    let mut out = vec![0.0; model.dim];
    Stepper::new(model).step(x, dt, &z, &mut out);
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExitRecord {
    pub time: f64,
    pub point: Vec<f64>,
    pub face: Face,
    /// `int_{t0}^{time} c(X_s) ds`.
    pub discount: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Advance {
    Moved,
    Exited,
    Horizon,
    Done,
}

/// Step-by-step path state. Keeps going after `Gamma0` touches (recording the
/// first one as the exit from `O`) until a `Gamma1` crossing or the horizon.
pub struct Walker<'a, N: NoiseSource> {
    model: &'a DiffusionModel,
    domain: &'a DomainSpec,
    cfg: &'a SimConfig,
    stepper: Stepper<'a>,
    noise: N,
    z: Vec<f64>,
    next: Vec<f64>,
    horizon: f64,
    outer_h: f64,
    outer_left: f64,
    in_touch: bool,
    pub t: f64,
    pub x: Vec<f64>,
    /// `int c` since the start.
    pub discount: f64,
    pub killing: f64,
    /// Length of the last step.
    pub last_h: f64,
    /// Discount increment added on the last step.
    pub last_k: f64,
    pub touched: bool,
    pub touches: usize,
    pub tau: Option<ExitRecord>,
    pub lambda: Option<ExitRecord>,
}

impl<'a, N: NoiseSource> Walker<'a, N> {
    pub fn new(
        model: &'a DiffusionModel,
        domain: &'a DomainSpec,
        cfg: &'a SimConfig,
        x0: &[f64],
        t0: f64,
        horizon: f64,
        noise: N,
    ) -> Result<Self> {
        if x0.len() != model.dim || domain.dim() != model.dim {
            return Err(Error::Config("dimension mismatch between point, model and domain".into()));
        }
        let loc = domain.locate(x0, cfg.boundary_tol);
        if loc == Location::Outside {
            return Err(Error::OutOfDomain(x0.to_vec()));
        }
        let mut x = x0.to_vec();
        let last = model.dim - 1;
        x[last] = x[last].max(0.0);
        let mut w = Walker {
            model,
            domain,
            cfg,
            stepper: Stepper::new(model),
            noise,
            z: vec![0.0; model.noise_dim],
            next: vec![0.0; model.dim],
            horizon,
            outer_h: 0.0,
            outer_left: 0.0,
            in_touch: false,
            t: t0,
            killing: model.killing_at(&x),
            x,
            discount: 0.0,
            last_h: 0.0,
            last_k: 0.0,
            touched: false,
            touches: 0,
            tau: None,
            lambda: None,
        };
        match loc {
            Location::Gamma1 { axis, upper } => {
                let r = w.record(Face::Gamma1 { axis, upper });
                w.tau = Some(r.clone());
                w.lambda = Some(r);
            }
            Location::Gamma0 => {
                w.in_touch = true;
                w.tau = Some(w.record(Face::Gamma0));
            }
            _ => {}
        }
        if t0 >= horizon && w.lambda.is_none() {
            w.finish_horizon();
        }
        Ok(w)
    }

    fn record(&self, face: Face) -> ExitRecord {
        let mut point = self.x.clone();
        self.domain.project(&mut point, face);
        ExitRecord {
            time: self.t,
            point,
            face,
            discount: self.discount,
        }
    }

    fn finish_horizon(&mut self) {
        let r = self.record(Face::Horizon);
        if self.tau.is_none() {
            self.tau = Some(r.clone());
        }
        self.lambda = Some(r);
    }

    pub fn done(&self) -> bool {
        self.lambda.is_some()
    }

    /// A downward move of `SAFE_SIGMAS` standard deviations of the
    /// degenerate coordinate stays nonnegative over a step of length `h`.
    fn safe(&self, h: f64) -> bool {
        let y = self.x[self.model.dim - 1];
        y + self.model.drift_last(y) * h >= SAFE_SIGMAS * (self.model.eta2(y) * h).sqrt()
    }

    /// Next step length: the outer step, split by `substep_factor` near
    /// `x_d = 0` and again until the step is safe (at most `max_refine` times).
    fn next_h(&mut self) -> f64 {
        if self.outer_left <= 0.0 {
            let rem = self.horizon - self.t;
            self.outer_h = if rem <= self.cfg.dt * (1.0 + 1e-9) { rem } else { self.cfg.dt };
            self.outer_left = self.outer_h;
        }
        let f = self.cfg.substep_factor;
        if f <= 1 {
            return self.outer_left;
        }
        let y = self.x[self.model.dim - 1];
        let near = y < 10.0 * self.cfg.boundary_tol.sqrt() * self.cfg.substep_scale;
        let max = self.cfg.max_refine;
        let mut level = usize::from(near).min(max);
        let mut h = self.outer_h / (f as f64).powi(level as i32);
        while level < max && !self.safe(h.min(self.outer_left)) {
            level += 1;
            h /= f as f64;
        }
        h.min(self.outer_left)
    }

    /// Advance by one (sub-)step.
    pub fn advance(&mut self) -> Advance {
        if self.done() {
            return Advance::Done;
        }
        let h = self.next_h();
        self.outer_left -= h;
        if self.outer_left <= 1e-12 * self.outer_h {
            self.outer_left = 0.0;
        }
        self.noise.fill(&mut self.z);
        self.stepper.step(&self.x, h, &self.z, &mut self.next);
        self.touched = false;
        if let Some((frac, face)) = self.domain.gamma1_crossing(&self.x, &self.next) {
            for i in 0..self.x.len() {
                self.x[i] += frac * (self.next[i] - self.x[i]);
            }
            self.domain.project(&mut self.x, face);
            let c = self.model.killing_at(&self.x);
            self.last_k = 0.5 * (self.killing + c) * frac * h;
            self.discount += self.last_k;
            self.killing = c;
            self.t += frac * h;
            self.last_h = frac * h;
            let r = self.record(face);
            if self.tau.is_none() {
                self.tau = Some(r.clone());
            }
            self.lambda = Some(r);
            self.outer_left = 0.0;
            return Advance::Exited;
        }
        std::mem::swap(&mut self.x, &mut self.next);
        let c = self.model.killing_at(&self.x);
        self.last_k = 0.5 * (self.killing + c) * h;
        self.discount += self.last_k;
        self.killing = c;
        self.t += h;
        self.last_h = h;
        if self.x[self.model.dim - 1] <= self.cfg.boundary_tol {
            if !self.in_touch {
                self.touches += 1;
                self.touched = true;
                self.in_touch = true;
            }
            if self.tau.is_none() {
                self.tau = Some(self.record(Face::Gamma0));
            }
        } else {
            self.in_touch = false;
        }
        if self.outer_left == 0.0 && self.horizon - self.t <= 1e-12 * self.horizon.abs().max(1.0) {
            self.t = self.horizon;
            self.finish_horizon();
            return Advance::Horizon;
        }
        Advance::Moved
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulatedPath {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Cumulative `int c` at each node.
    pub discount: Vec<f64>,
    pub killing: Vec<f64>,
    pub touch: Vec<bool>,
    pub tau_exit: ExitRecord,
    pub lambda_exit: ExitRecord,
    pub gamma0_touches: usize,
}

/// Simulate one path until it leaves through `Gamma1` or reaches `horizon`.
pub fn simulate_path<N: NoiseSource>(
    model: &DiffusionModel,
    domain: &DomainSpec,
    x0: &[f64],
    t0: f64,
    horizon: f64,
    cfg: &SimConfig,
    noise: N,
) -> Result<SimulatedPath> {
    let mut w = Walker::new(model, domain, cfg, x0, t0, horizon, noise)?;
    let mut p = SimulatedPath {
        times: vec![w.t],
        states: vec![w.x.clone()],
        discount: vec![0.0],
        killing: vec![w.killing],
        touch: vec![w.tau.as_ref().is_some_and(|r| r.face == Face::Gamma0)],
        tau_exit: w.tau.clone().unwrap_or_else(|| w.record(Face::Horizon)),
        lambda_exit: w.record(Face::Horizon),
        gamma0_touches: 0,
    };
    while !w.done() {
        w.advance();
        p.times.push(w.t);
        p.states.push(w.x.clone());
        p.discount.push(w.discount);
        p.killing.push(w.killing);
        p.touch.push(w.touched);
    }
    p.tau_exit = w.tau.clone().expect("tau recorded before lambda");
    p.lambda_exit = w.lambda.clone().expect("walker finished");
    p.gamma0_touches = w.touches;
    Ok(p)
}

/// `exp(-int_{t0}^{s} c(X_u) du)` along a stored path (trapezoid in time).
pub fn discount_weight(path: &SimulatedPath, s: f64) -> f64 {
    let t = &path.times;
    if s <= t[0] {
        return 1.0;
    }
    let k = t.partition_point(|v| *v <= s);
    if k >= t.len() {
        return (-path.discount[t.len() - 1]).exp();
    }
    let (t0, t1) = (t[k - 1], t[k]);
    let w = if t1 > t0 { (s - t0) / (t1 - t0) } else { 0.0 };
    let c0 = path.killing[k - 1];
    let cs = c0 + w * (path.killing[k] - c0);
    (-(path.discount[k - 1] + 0.5 * (c0 + cs) * (s - t0))).exp()
}

/// `int_0^h exp(-D(s)) f(s) ds` with `D` and `f` linear on the step. `k` is
/// the increment of `D`; `e0`, `e1` are the discount factors the caller
/// applies at the two ends. For `f0 = f1 = c` and `k = c h` the result is
/// `e0 - e1`, so running cost plus discounted exit value telescope exactly.
pub fn exp_trapezoid(h: f64, k: f64, e0: f64, e1: f64, f0: f64, f1: f64) -> f64 {
    let k2 = k * k;
    // below 1e-6 the difference e0 - e1 loses more than 1e-10 to rounding
    let mean = if k >= 1e-6 {
        (e0 - e1) / k
    } else {
        e0 * (1.0 - k / 2.0 + k2 / 6.0)
    };
    let slope = if k.abs() < 1e-4 {
        0.5 - k / 3.0 + k2 / 8.0 - k2 * k / 30.0
    } else {
        let m = -(-k).exp_m1() / k;
        (m - (-k).exp()) / k
    };
    h * (f0 * mean + (f1 - f0) * e0 * slope)
}

// ---------------------------------------------------------------------------
// supermartingale envelope

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeConstant {
    /// `M = max(0, -inf_x [c |x|^2 - (p |x|^2 + |b|^2 / p + |sigma|_F^2)])`.
    pub m: f64,
    pub p: f64,
    pub argmin: Vec<f64>,
    /// Objective minima on shells of radius `R 2^j`.
    pub shell_minima: Vec<f64>,
}

fn envelope_objective(model: &DiffusionModel, x: &[f64], p: f64, b: &mut [f64], s: &mut [f64]) -> f64 {
    model.drift_into(x, b);
    model.vol_into(x, s);
    let r2: f64 = x.iter().map(|v| v * v).sum();
    let b2: f64 = b.iter().map(|v| v * v).sum();
    let s2: f64 = s.iter().map(|v| v * v).sum();
    model.killing_at(x) * r2 - (p * r2 + b2 / p + s2)
}

/// Search for the envelope constant over `search`. With `p = None`, sweep
/// `p in {c0/2, c0/4, c0/8}` and keep the smallest admissible `M`.
pub fn compute_m(model: &DiffusionModel, search: &GridSpec, p: Option<f64>) -> Result<EnvelopeConstant> {
    if !(model.c0 > 0.0) {
        return Err(Error::ConditionLikelyViolated("c0 must be positive".into()));
    }
    let ps = match p {
        Some(p) if p > 0.0 => vec![p],
        Some(p) => return Err(Error::Config(format!("p must be positive, got {p}"))),
        None => vec![model.c0 / 2.0, model.c0 / 4.0, model.c0 / 8.0],
    };
    let d = model.dim;
    let mut b = vec![0.0; d];
    let mut s = vec![0.0; d * model.noise_dim];
    let pts = search.points();
    let radius = search
        .lower
        .iter()
        .zip(&search.upper)
        .map(|(a, c)| a.abs().max(c.abs()))
        .fold(0.0, f64::max);
    let dirs: Vec<Vec<f64>> = pts
        .iter()
        .filter_map(|x| {
            let n = norm2(x);
            (n > 0.0).then(|| x.iter().map(|v| v / n).collect())
        })
        .collect();
    let mut best: Option<EnvelopeConstant> = None;
    let mut last_reason = String::new();
    for p in ps {
        let mut min = f64::INFINITY;
        let mut argmin = vec![0.0; d];
        for x in &pts {
            let v = envelope_objective(model, x, p, &mut b, &mut s);
            if !v.is_finite() {
                return Err(Error::EvaluationFailure {
                    at: x.clone(),
                    detail: "non-finite envelope objective".into(),
                });
            }
            if v < min {
                min = v;
                argmin = x.clone();
            }
        }
        let mut shell_minima = Vec::new();
        for j in 0..5 {
            let r = radius * 2f64.powi(j);
            let mut sm = f64::INFINITY;
            let mut y = vec![0.0; d];
            for u in &dirs {
                for i in 0..d {
                    y[i] = r * u[i];
                }
                sm = sm.min(envelope_objective(model, &y, p, &mut b, &mut s));
            }
            shell_minima.push(sm);
        }
        let n = shell_minima.len();
        let falling = shell_minima[n - 4..].windows(2).all(|w| w[1] < w[0]) && shell_minima[n - 1] < 0.0;
        if falling {
            last_reason = format!(
                "objective keeps falling on large shells with p = {p}: {:?}",
                shell_minima
            );
            continue;
        }
        let m = (-min).max(0.0);
        if best.as_ref().is_none_or(|e| m < e.m) {
            best = Some(EnvelopeConstant {
                m,
                p,
                argmin,
                shell_minima,
            });
        }
    }
    best.ok_or(Error::ConditionLikelyViolated(last_reason))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopePoint {
    pub t: f64,
    pub mean: f64,
    pub stderr: f64,
    /// Paired increment `Z_t - Z_{t_prev}` over paths.
    pub increment: f64,
    pub increment_stderr: f64,
}

/// Monte Carlo profile of `Z_t = exp(-int c) |X_t|^2 + (M/c0) exp(-c0 t)`
/// on the whole half-space.
pub fn envelope_profile(model: &DiffusionModel, x0: &[f64], times: &[f64], m: f64, cfg: &SimConfig) -> Result<Vec<EnvelopePoint>> {
    cfg.check()?;
    let domain = DomainSpec::half_space(model.dim);
    let horizon = times.iter().cloned().fold(0.0, f64::max);
    let k = times.len();
    let z_of = |t: f64, disc: f64, x: &[f64]| (-disc).exp() * x.iter().map(|v| v * v).sum::<f64>() + m / model.c0 * (-model.c0 * t).exp();
    let batches = with_threads(cfg.threads, || {
        batched(cfg.n_paths, |range| -> Result<(Vec<Moments>, Vec<Moments>)> {
            let mut levels = vec![Moments::default(); k];
            let mut incs = vec![Moments::default(); k];
            for i in range {
                let mut w = Walker::new(model, &domain, cfg, x0, 0.0, horizon, cfg.noise(i as u64))?;
                let mut zs = vec![0.0; k];
                for (j, &t) in times.iter().enumerate() {
                    while w.t < t - 1e-9 && !w.done() {
                        w.advance();
                    }
                    zs[j] = z_of(w.t, w.discount, &w.x);
                }
                for j in 0..k {
                    levels[j].push(zs[j]);
                    incs[j].push(if j == 0 { 0.0 } else { zs[j] - zs[j - 1] });
                }
            }
            Ok((levels, incs))
        })
    });
    let mut levels = vec![Moments::default(); k];
    let mut incs = vec![Moments::default(); k];
    for b in batches {
        let (l, i) = b?;
        for j in 0..k {
            levels[j] = levels[j].merge(&l[j]);
            incs[j] = incs[j].merge(&i[j]);
        }
    }
    Ok((0..k)
        .map(|j| EnvelopePoint {
            t: times[j],
            mean: levels[j].mean,
            stderr: levels[j].stderr(),
            increment: incs[j].mean,
            increment_stderr: incs[j].stderr(),
        })
        .collect())
}

// ---------------------------------------------------------------------------
// one-dimensional interval exits of the degenerate coordinate

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalExit {
    pub p_upper: f64,
    pub p_stderr: f64,
    pub mean_time: f64,
    pub time_stderr: f64,
    pub n_paths: usize,
}

/// Empirical `P_y(T_b < T_a)` and `E_y[T_a ^ T_b]` for `X^(d)` with a
/// Brownian-bridge crossing correction between grid points.
pub fn interval_exit(model: &DiffusionModel, a: f64, y: f64, b: f64, dt: f64, n_paths: usize, seed: u64, threads: Option<usize>) -> Result<IntervalExit> {
    if !(0.0 < a && a < y && y < b) {
        return Err(Error::OutOfRange(format!("need 0 < a < y < b, got {a}, {y}, {b}")));
    }
    let sq = dt.sqrt();
    let batches = with_threads(threads, || {
        batched(n_paths, |range| {
            let mut hit = Moments::default();
            let mut time = Moments::default();
            let mut z = [0.0];
            for i in range {
                let mut noise = GaussianNoise::new(seed, i as u64);
                let (mut t, mut v) = (0.0, y);
                let upper = loop {
                    let mu = model.drift_last(v);
                    let e2 = model.eta2(v);
                    noise.fill(&mut z);
                    let w = v + mu * dt + e2.sqrt() * sq * z[0];
                    if w >= b {
                        t += dt * (b - v) / (w - v);
                        break true;
                    }
                    if w <= a {
                        t += dt * (v - a) / (v - w);
                        break false;
                    }
                    let pu = (-2.0 * (b - v) * (b - w) / (e2 * dt)).exp();
                    let pl = (-2.0 * (v - a) * (w - a) / (e2 * dt)).exp();
                    let u = noise.uniform();
                    if u < pu {
                        t += 0.5 * dt;
                        break true;
                    }
                    if u < pu + pl {
                        t += 0.5 * dt;
                        break false;
                    }
                    t += dt;
                    v = w;
                };
                hit.push(if upper { 1.0 } else { 0.0 });
                time.push(t);
            }
            (hit, time)
        })
    });
    let (mut hit, mut time) = (Moments::default(), Moments::default());
    for (h, t) in batches {
        hit = hit.merge(&h);
        time = time.merge(&t);
    }
    Ok(IntervalExit {
        p_upper: hit.mean,
        p_stderr: hit.stderr(),
        mean_time: time.mean,
        time_stderr: time.stderr(),
        n_paths,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_trapezoid_exact_for_constants() {
        let (c, f, h) = (0.3f64, 2.0, 0.7);
        let (e0, e1) = ((-0.1f64).exp(), (-0.1f64 - c * h).exp());
        let got = exp_trapezoid(h, c * h, e0, e1, f, f);
        let want = e0 * f * (1.0 - (-c * h).exp()) / c;
        assert!((got - want).abs() < 1e-15);
        let tele = exp_trapezoid(h, c * h, e0, e1, c, c);
        assert!((tele - (e0 - e1)).abs() <= 4.0 * f64::EPSILON * (e0 - e1));
        let small = exp_trapezoid(h, 1e-7, 1.0, (-1e-7f64).exp(), 1.0, 3.0);
        assert!((small - h * 2.0).abs() < 1e-6);
    }
}
