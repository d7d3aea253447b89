//! Degenerate diffusion models on the closed half-space `x_d >= 0`.
//!
//! The generator is `A u = -1/2 tr(a D^2 u) - <b, Du> + c u` with
//! `a = sigma sigma^T`, `sigma = x_d^{beta/2} sigma~`. The last row of the
//! reduced volatility `sigma~` is `rho_j * sigma0(x_d)`, so the degenerate
//! coordinate is a one-dimensional diffusion on its own.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{Expr, Jet};
use smallvec::SmallVec;

/// Hoelder control of `b_d` at the origin: `|b_d(y) - b_d(0)| <= L y^gamma`
/// for `0 <= y <= radius`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolderData {
    pub gamma: f64,
    pub lipschitz: f64,
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionModel {
    pub name: String,
    pub dim: usize,
    pub noise_dim: usize,
    pub beta: f64,
    /// One expression per coordinate. `drift[dim-1]` may only read `x_d`.
    pub drift: Vec<Expr>,
    /// First `dim-1` rows of the reduced volatility, each `noise_dim` long.
    pub reduced_vol: Vec<Vec<Expr>>,
    pub rho: Vec<f64>,
    /// Function of `x_d` only.
    pub sigma0: Expr,
    pub killing: Expr,
    /// Lower bound of the killing rate.
    pub c0: f64,
    /// Linear-growth constant for drift and volatility.
    pub growth_k: f64,
    /// Uniform ellipticity constant of `sigma~ sigma~^T`.
    pub ellipticity: f64,
    #[serde(default)]
    pub holder: Option<HolderData>,
    #[serde(default)]
    pub sigma0_locally_constant: bool,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl DiffusionModel {
    pub fn last(&self) -> usize {
        self.dim - 1
    }

    /// Drift `b(x)`. The degenerate coordinate is read as `max(x_d, 0)`.
    pub fn drift_into(&self, x: &[f64], out: &mut [f64]) {
        with_clamped(x, self.last(), |xc| {
            for (o, e) in out.iter_mut().zip(&self.drift) {
                *o = e.eval(0.0, xc);
            }
        });
    }

    /// Reduced volatility `sigma~(x)`, row-major `dim x noise_dim`.
    pub fn reduced_vol_into(&self, x: &[f64], out: &mut [f64]) {
        let m = self.noise_dim;
        with_clamped(x, self.last(), |xc| {
            for (i, row) in self.reduced_vol.iter().enumerate() {
                for (j, e) in row.iter().enumerate() {
                    out[i * m + j] = e.eval(0.0, xc);
                }
            }
        });
        let s0 = self.sigma0_at(x[self.last()].max(0.0));
        let base = self.last() * m;
        for j in 0..m {
            out[base + j] = self.rho[j] * s0;
        }
    }

    /// Full volatility `x_d^{beta/2} sigma~(x)`.
    pub fn vol_into(&self, x: &[f64], out: &mut [f64]) {
        self.reduced_vol_into(x, out);
        let f = self.degeneracy_factor(x[self.last()]).sqrt();
        for v in out.iter_mut() {
            *v *= f;
        }
    }

    /// `x_d^beta` on the positive part.
    pub fn degeneracy_factor(&self, y: f64) -> f64 {
        if !(y > 0.0) {
            return 0.0;
        }
        match self.beta {
            b if b == 1.0 => y,
            b if b == 2.0 => y * y,
            b if b == 0.0 => 1.0,
            b => y.powf(b),
        }
    }

    /// Reduced diffusion matrix `sigma~ sigma~^T`, row-major.
    pub fn reduced_diffusion(&self, x: &[f64]) -> Vec<f64> {
        let (d, m) = (self.dim, self.noise_dim);
        let mut s = vec![0.0; d * m];
        self.reduced_vol_into(x, &mut s);
        let mut a = vec![0.0; d * d];
        for i in 0..d {
            for k in 0..d {
                a[i * d + k] = (0..m).map(|j| s[i * m + j] * s[k * m + j]).sum();
            }
        }
        a
    }

    /// Diffusion matrix `a(x) = x_d^beta sigma~ sigma~^T`, row-major.
    pub fn diffusion(&self, x: &[f64]) -> Vec<f64> {
        let f = self.degeneracy_factor(x[self.last()]);
        let mut a = self.reduced_diffusion(x);
        for v in a.iter_mut() {
            *v *= f;
        }
        a
    }

    pub fn killing_at(&self, x: &[f64]) -> f64 {
        let mut c = 0.0;
        with_clamped(x, self.last(), |xc| c = self.killing.eval(0.0, xc));
        c
    }

    /// `b_d(y)`.
    pub fn drift_last(&self, y: f64) -> f64 {
        self.drift[self.last()].eval_axis(self.last(), y)
    }

    /// `sigma0(y)`.
    pub fn sigma0_at(&self, y: f64) -> f64 {
        self.sigma0.eval_axis(self.last(), y)
    }

    /// Squared volatility of the degenerate coordinate, `y^beta sigma0(y)^2`.
    pub fn eta2(&self, y: f64) -> f64 {
        let s = self.sigma0_at(y);
        self.degeneracy_factor(y) * s * s
    }

    /// The box used by default when sampling assumptions.
    pub fn default_grid(&self) -> GridSpec {
        let d = self.dim;
        let mut lower = vec![-4.0; d];
        lower[d - 1] = 0.0;
        let per_axis = ((2.0e5_f64).powf(1.0 / d as f64).floor() as usize).clamp(3, 64);
        GridSpec {
            lower,
            upper: vec![4.0; d],
            points_per_axis: per_axis,
        }
    }
}

fn with_clamped<F: FnOnce(&[f64])>(x: &[f64], last: usize, f: F) {
    if x[last] >= 0.0 {
        f(x)
    } else {
        let mut xc = [0.0; 8];
        if x.len() <= 8 {
            xc[..x.len()].copy_from_slice(x);
            xc[last] = 0.0;
            f(&xc[..x.len()])
        } else {
            let mut v = x.to_vec();
            v[last] = 0.0;
            f(&v)
        }
    }
}

/// Tensor sampling grid for assumption checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub points_per_axis: usize,
}

impl GridSpec {
    pub fn points(&self) -> Vec<Vec<f64>> {
        let d = self.lower.len();
        let n = self.points_per_axis.max(2);
        let total = n.pow(d as u32);
        let mut pts = Vec::with_capacity(total);
        for mut idx in 0..total {
            let mut p = vec![0.0; d];
            for i in (0..d).rev() {
                let k = idx % n;
                idx /= n;
                p[i] = self.lower[i] + (self.upper[i] - self.lower[i]) * k as f64 / (n - 1) as f64;
            }
            pts.push(p);
        }
        pts
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionCheck {
    pub name: String,
    pub hard: bool,
    pub passed: bool,
    pub worst_value: f64,
    pub worst_point: Option<Vec<f64>>,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub model: String,
    pub checks: Vec<AssumptionCheck>,
    pub accepted: bool,
    /// Set when the model is usable but lies outside the `d >= 2` setting.
    pub extension_note: Option<String>,
}

impl ValidationReport {
    pub fn first_failure(&self) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.hard && !c.passed)
    }
}

struct Worst {
    value: f64,
    point: Option<Vec<f64>>,
}

impl Worst {
    fn new() -> Self {
        Worst {
            value: f64::NEG_INFINITY,
            point: None,
        }
    }

    fn offer(&mut self, v: f64, x: &[f64]) {
        if v > self.value {
            self.value = v;
            self.point = Some(x.to_vec());
        }
    }
}

fn check(name: &str, hard: bool, passed: bool, w: Worst, detail: String) -> AssumptionCheck {
    AssumptionCheck {
        name: name.to_string(),
        hard,
        passed,
        worst_value: w.value,
        worst_point: w.point,
        detail,
    }
}

/// Run every assumption check and report, without failing on violations.
pub fn assess_model(model: &DiffusionModel, grid: &GridSpec) -> Result<ValidationReport> {
    let d = model.dim;
    let m = model.noise_dim;
    let mut checks = Vec::new();

    let shape_ok = d >= 1
        && m >= 1
        && model.drift.len() == d
        && model.reduced_vol.len() == d - 1
        && model.reduced_vol.iter().all(|r| r.len() == m)
        && model.rho.len() == m
        && grid.lower.len() == d
        && grid.upper.len() == d;
    let axes_ok = model
        .drift
        .iter()
        .chain(model.reduced_vol.iter().flatten())
        .chain([&model.sigma0, &model.killing])
        .all(|e| e.max_axis().is_none_or(|a| a < d));
    checks.push(check(
        "dimensions",
        true,
        shape_ok && axes_ok,
        Worst::new(),
        format!("d = {d}, m = {m}"),
    ));
    if !(shape_ok && axes_ok) {
        return Ok(finish(model, checks));
    }
    let last = d - 1;

    let mut w = Worst::new();
    w.value = model.beta;
    checks.push(check(
        "beta-range",
        true,
        model.beta > 0.0 && model.beta <= 2.0,
        w,
        "0 < beta <= 2".into(),
    ));

    let norm = model.rho.iter().map(|r| r * r).sum::<f64>().sqrt();
    let mut w = Worst::new();
    w.value = norm;
    checks.push(check(
        "rho-unit-norm",
        true,
        (norm - 1.0).abs() <= 1e-12 && model.rho.iter().all(|r| *r > 0.0),
        w,
        "rho_j > 0 and |rho| = 1".into(),
    ));

    let drift_only_xd = (0..last).all(|i| !model.drift[last].uses_axis(i)) && !model.drift[last].uses_time();
    let sigma0_only_xd = (0..last).all(|i| !model.sigma0.uses_axis(i)) && !model.sigma0.uses_time();
    checks.push(check(
        "last-coefficients-depend-on-x_d-only",
        true,
        drift_only_xd && sigma0_only_xd,
        Worst::new(),
        "b_d and sigma0 may only read x_d".into(),
    ));

    let b0 = model.drift_last(0.0);
    let mut w = Worst::new();
    w.value = b0;
    w.point = Some({
        let mut p = vec![0.0; d];
        p[last] = 0.0;
        p
    });
    checks.push(check(
        "drift-inward-at-boundary",
        true,
        b0 >= 0.0,
        w,
        "b_d(0) >= 0".into(),
    ));

    let pts = grid.points();
    let mut kill = Worst::new();
    let mut ell = Worst::new();
    let mut gb = Worst::new();
    let mut gs = Worst::new();
    let mut b = vec![0.0; d];
    let mut s = vec![0.0; d * m];
    for x in &pts {
        model.drift_into(x, &mut b);
        model.vol_into(x, &mut s);
        let c = model.killing_at(x);
        if b.iter().chain(&s).any(|v| !v.is_finite()) || !c.is_finite() {
            return Err(Error::EvaluationFailure {
                at: x.clone(),
                detail: "non-finite coefficient".into(),
            });
        }
        kill.offer(model.c0 - c, x);
        let at = model.reduced_diffusion(x);
        let lam = min_eigenvalue(&at, d);
        ell.offer(model.ellipticity - lam, x);
        let scale = 1.0 + norm2(x);
        gb.offer(norm2(&b) / scale, x);
        gs.offer(norm2(&s) / scale, x);
    }
    let kill_ok = model.c0 > 0.0 && kill.value <= 0.0;
    checks.push(check("killing-floor", true, kill_ok, kill, format!("c(x) >= c0 = {}", model.c0)));
    let ell_ok = model.ellipticity > 0.0 && ell.value <= 0.0;
    checks.push(check(
        "uniform-ellipticity",
        true,
        ell_ok,
        ell,
        format!("lambda_min(sigma~ sigma~^T) >= {}", model.ellipticity),
    ));
    let kk = model.growth_k * (1.0 + 1e-9);
    let ok = gb.value <= kk;
    checks.push(check("linear-growth-drift", true, ok, gb, format!("|b| <= K(1+|x|), K = {}", model.growth_k)));
    let ok = gs.value <= kk;
    checks.push(check("linear-growth-vol", true, ok, gs, format!("|sigma| <= K(1+|x|), K = {}", model.growth_k)));

    if let Some(h) = &model.holder {
        let mut w = Worst::new();
        let n = 200;
        let mut ok = h.gamma > 0.0 && h.gamma <= 1.0 && h.lipschitz > 0.0 && h.radius > 0.0;
        for k in 1..=n {
            let y = h.radius * k as f64 / n as f64;
            let dev = (model.drift_last(y) - b0).abs() - h.lipschitz * y.powf(h.gamma) * (1.0 + 1e-9);
            let mut p = vec![0.0; d];
            p[last] = y;
            w.offer(dev, &p);
        }
        ok &= w.value <= 0.0;
        checks.push(check("holder-at-origin", false, ok, w, "|b_d(y)-b_d(0)| <= L y^gamma".into()));
    }

    Ok(finish(model, checks))
}

fn finish(model: &DiffusionModel, checks: Vec<AssumptionCheck>) -> ValidationReport {
    let accepted = checks.iter().all(|c| !c.hard || c.passed);
    ValidationReport {
        model: model.name.clone(),
        checks,
        accepted,
        extension_note: extension_note(model),
    }
}

/// Set for scalar models, which lie outside the `d >= 2` setting.
pub fn extension_note(model: &DiffusionModel) -> Option<String> {
    (model.dim == 1).then(|| "d = 1: scalar degenerate diffusion, handled as an extension of the d >= 2 setting".to_string())
}

/// Validate and fail on the first violated hard assumption.
pub fn validate_model(model: &DiffusionModel, grid: &GridSpec) -> Result<ValidationReport> {
    let report = assess_model(model, grid)?;
    if let Some(c) = report.first_failure() {
        return Err(Error::AssumptionViolation {
            assumption: c.name.clone(),
            at: c.worst_point.clone().unwrap_or_default(),
            detail: c.detail.clone(),
        });
    }
    Ok(report)
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn min_eigenvalue(a: &[f64], d: usize) -> f64 {
    match d {
        1 => a[0],
        2 => {
            let (p, q, r) = (a[0], a[1], a[3]);
            let tr = p + r;
            let disc = ((p - r) * (p - r) + 4.0 * q * q).sqrt();
            0.5 * (tr - disc)
        }
        _ => {
            let m = DMatrix::from_row_slice(d, d, a);
            SymmetricEigen::new(m).eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
        }
    }
}

/// Something with exact (or numerical) first and second derivatives.
pub trait SmoothField {
    fn jet(&self, t: f64, x: &[f64]) -> Jet;
}

impl SmoothField for Expr {
    fn jet(&self, t: f64, x: &[f64]) -> Jet {
        Expr::jet(self, t, x)
    }
}

/// Central-difference derivatives of an arbitrary closure.
pub struct FiniteDifference<F> {
    pub f: F,
    pub h: f64,
}

impl<F: Fn(f64, &[f64]) -> f64> SmoothField for FiniteDifference<F> {
    fn jet(&self, t: f64, x: &[f64]) -> Jet {
        let d = x.len();
        let h = self.h;
        let f0 = (self.f)(t, x);
        let mut grad: crate::expr::Grad = smallvec::smallvec![0.0; d];
        let mut hess: crate::expr::Hess = smallvec::smallvec![0.0; d * d];
        let mut y = x.to_vec();
        for i in 0..d {
            for k in 0..d {
                if i == k {
                    y[i] = x[i] + h;
                    let fp = (self.f)(t, &y);
                    y[i] = x[i] - h;
                    let fm = (self.f)(t, &y);
                    y[i] = x[i];
                    grad[i] = (fp - fm) / (2.0 * h);
                    hess[i * d + i] = (fp - 2.0 * f0 + fm) / (h * h);
                } else if k > i {
                    let mut e = |si: f64, sk: f64| {
                        y[i] = x[i] + si * h;
                        y[k] = x[k] + sk * h;
                        let v = (self.f)(t, &y);
                        y[i] = x[i];
                        y[k] = x[k];
                        v
                    };
                    let v = (e(1.0, 1.0) - e(1.0, -1.0) - e(-1.0, 1.0) + e(-1.0, -1.0)) / (4.0 * h * h);
                    hess[i * d + k] = v;
                    hess[k * d + i] = v;
                }
            }
        }
        let dt = ((self.f)(t + h, x) - (self.f)(t - h, x)) / (2.0 * h);
        Jet {
            value: f0,
            grad,
            hess,
            dt,
        }
    }
}

/// `A u` from a jet of `u` at an interior point.
pub fn generator_of_jet(model: &DiffusionModel, x: &[f64], u: &Jet) -> f64 {
    let (d, m) = (model.dim, model.noise_dim);
    let mut s: SmallVec<[f64; 16]> = smallvec::smallvec![0.0; d * m];
    model.reduced_vol_into(x, &mut s);
    let f = model.degeneracy_factor(x[model.last()]);
    let mut b: SmallVec<[f64; 4]> = smallvec::smallvec![0.0; d];
    model.drift_into(x, &mut b);
    let mut tr = 0.0;
    for i in 0..d {
        for k in 0..d {
            let aik: f64 = (0..m).map(|j| s[i * m + j] * s[k * m + j]).sum();
            tr += f * aik * u.hess[i * d + k];
        }
    }
    let adv: f64 = b.iter().zip(&u.grad).map(|(bi, gi)| bi * gi).sum();
    -0.5 * tr - adv + model.killing_at(x) * u.value
}

/// Apply the generator to `u` at an interior point (`x_d > 0`).
pub fn apply_generator(model: &DiffusionModel, u: &dyn SmoothField, x: &[f64]) -> Result<f64> {
    if x.len() != model.dim {
        return Err(Error::Config(format!("point has dimension {}, model {}", x.len(), model.dim)));
    }
    if x[model.last()] <= 0.0 {
        return Err(Error::BoundaryPoint(x.to_vec()));
    }
    Ok(generator_of_jet(model, x, &u.jet(0.0, x)))
}

// ---------------------------------------------------------------------------
// presets

pub type PresetParams = BTreeMap<String, f64>;

struct Params<'a> {
    preset: &'a str,
    given: &'a PresetParams,
    used: Vec<&'static str>,
}

impl<'a> Params<'a> {
    fn new(preset: &'a str, given: &'a PresetParams) -> Self {
        Params {
            preset,
            given,
            used: Vec::new(),
        }
    }

    fn get(&mut self, name: &'static str, default: Option<f64>) -> Result<f64> {
        self.used.push(name);
        match (self.given.get(name), default) {
            (Some(v), _) if v.is_finite() => Ok(*v),
            (Some(v), _) => Err(out_of_range(name, format!("{v} is not finite"))),
            (None, Some(v)) => Ok(v),
            (None, None) => Err(out_of_range(name, format!("required by preset `{}`", self.preset))),
        }
    }

    fn finish(&self) -> Result<()> {
        for k in self.given.keys() {
            if !self.used.contains(&k.as_str()) {
                return Err(out_of_range(k, format!("not a parameter of `{}`", self.preset)));
            }
        }
        Ok(())
    }
}

fn out_of_range(name: &str, detail: String) -> Error {
    Error::ParamOutOfRange {
        name: name.to_string(),
        detail,
    }
}

fn require(cond: bool, name: &str, detail: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(out_of_range(name, detail.to_string()))
    }
}

pub const PRESETS: [&str; 5] = ["heston", "cev", "sabr", "cir1d", "gbm1d"];

/// Build a preset model from named parameters.
pub fn preset(name: &str, params: &PresetParams) -> Result<DiffusionModel> {
    let mut p = Params::new(name, params);
    let model = match name {
        "heston" => {
            let kappa = p.get("kappa", Some(2.0))?;
            let theta = p.get("theta", Some(0.09))?;
            let sigma = p.get("sigma", Some(0.3))?;
            let corr = p.get("rho", Some(-0.5))?;
            let r = p.get("r", Some(0.05))?;
            let killing = p.get("killing", Some(r))?;
            heston(kappa, theta, sigma, corr, r, killing)?
        }
        "cev" => {
            let mu = p.get("mu", Some(0.05))?;
            let sigma = p.get("sigma", Some(0.3))?;
            let beta = p.get("beta", Some(1.0))?;
            let alpha = p.get("alpha", Some(0.0))?;
            let killing = p.get("killing", Some(if mu > 0.0 { mu } else { 0.05 }))?;
            cev(mu, sigma, beta, alpha, killing)?
        }
        "sabr" => {
            let nu = p.get("nu", Some(0.4))?;
            let corr = p.get("rho", Some(-0.3))?;
            let bs = p.get("beta_sabr", Some(0.0))?;
            let killing = p.get("killing", Some(0.05))?;
            sabr(nu, corr, bs, killing)?
        }
        "cir1d" => {
            let kappa = p.get("kappa", Some(1.0))?;
            let theta = p.get("theta", Some(0.2))?;
            let sigma = p.get("sigma", Some(1.0))?;
            let killing = p.get("killing", Some(0.05))?;
            cir1d(kappa, theta, sigma, killing)?
        }
        "gbm1d" => {
            let mu = p.get("mu", Some(0.05))?;
            let sigma = p.get("sigma", Some(0.2))?;
            let killing = p.get("killing", Some(if mu > 0.0 { mu } else { 0.05 }))?;
            gbm1d(mu, sigma, killing)?
        }
        other => return Err(Error::UnknownPreset(other.to_string())),
    };
    p.finish()?;
    Ok(model)
}

fn unit_row_with_correlation(rho: &[f64; 2], corr: f64) -> [f64; 2] {
    let base = rho[1].atan2(rho[0]);
    let phi = base + corr.clamp(-1.0, 1.0).acos();
    [phi.cos(), phi.sin()]
}

const RHO2: [f64; 2] = [std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2];

/// Heston in `(log S, v)`. The variance is the degenerate coordinate, beta = 1.
pub fn heston(kappa: f64, theta: f64, sigma: f64, corr: f64, r: f64, killing: f64) -> Result<DiffusionModel> {
    require(kappa > 0.0, "kappa", "must be > 0")?;
    require(theta > 0.0, "theta", "must be > 0")?;
    require(sigma > 0.0, "sigma", "must be > 0")?;
    require(corr > -1.0 && corr < 1.0, "rho", "must lie in (-1, 1)")?;
    require(killing > 0.0, "killing", "must be > 0")?;
    let row = unit_row_with_correlation(&RHO2, corr);
    let lam = min_eigenvalue(&[1.0, corr * sigma, corr * sigma, sigma * sigma], 2);
    let k_drift = (r.abs() + kappa * theta).max(0.5 + kappa);
    let k_vol = (1.0 + sigma * sigma).sqrt();
    Ok(DiffusionModel {
        name: "heston".into(),
        dim: 2,
        noise_dim: 2,
        beta: 1.0,
        drift: vec![
            Expr::affine(r, vec![0.0, -0.5]),
            Expr::affine(kappa * theta, vec![0.0, -kappa]),
        ],
        reduced_vol: vec![vec![Expr::constant(row[0]), Expr::constant(row[1])]],
        rho: RHO2.to_vec(),
        sigma0: Expr::constant(sigma),
        killing: Expr::constant(killing),
        c0: killing,
        growth_k: k_drift.max(k_vol),
        ellipticity: lam * (1.0 - 1e-9),
        holder: Some(HolderData {
            gamma: 1.0,
            lipschitz: kappa,
            radius: 1.0,
        }),
        sigma0_locally_constant: true,
        notes: vec!["coordinates (log S, v); the variance v is the degenerate coordinate".into()],
    })
}

fn scalar_model(name: &str, beta: f64, drift: Expr, sigma: f64, killing: f64, growth_k: f64, lipschitz: f64) -> DiffusionModel {
    DiffusionModel {
        name: name.into(),
        dim: 1,
        noise_dim: 1,
        beta,
        drift: vec![drift],
        reduced_vol: vec![],
        rho: vec![1.0],
        sigma0: Expr::constant(sigma),
        killing: Expr::constant(killing),
        c0: killing,
        growth_k,
        ellipticity: sigma * sigma * (1.0 - 1e-9),
        holder: Some(HolderData {
            gamma: 1.0,
            lipschitz: lipschitz.max(1e-12),
            radius: 1.0,
        }),
        sigma0_locally_constant: true,
        notes: vec![],
    }
}

/// `dX = (alpha + mu X) dt + sigma X^{beta/2} dW`.
pub fn cev(mu: f64, sigma: f64, beta: f64, alpha: f64, killing: f64) -> Result<DiffusionModel> {
    require(sigma > 0.0, "sigma", "must be > 0")?;
    require(beta > 0.0 && beta < 2.0, "beta", "must lie in (0, 2)")?;
    require(alpha >= 0.0, "alpha", "must be >= 0")?;
    require(killing > 0.0, "killing", "must be > 0")?;
    let k = alpha.max(mu.abs()).max(sigma);
    Ok(scalar_model("cev", beta, Expr::affine(alpha, vec![mu]), sigma, killing, k, mu.abs()))
}

/// `dX = kappa (theta - X) dt + sigma sqrt(X) dW`.
pub fn cir1d(kappa: f64, theta: f64, sigma: f64, killing: f64) -> Result<DiffusionModel> {
    require(kappa > 0.0, "kappa", "must be > 0")?;
    require(theta > 0.0, "theta", "must be > 0")?;
    require(sigma > 0.0, "sigma", "must be > 0")?;
    require(killing > 0.0, "killing", "must be > 0")?;
    let k = (kappa * theta).max(kappa).max(sigma);
    Ok(scalar_model("cir1d", 1.0, Expr::affine(kappa * theta, vec![-kappa]), sigma, killing, k, kappa))
}

/// `dX = mu X dt + sigma X dW`.
pub fn gbm1d(mu: f64, sigma: f64, killing: f64) -> Result<DiffusionModel> {
    require(sigma > 0.0, "sigma", "must be > 0")?;
    require(killing > 0.0, "killing", "must be > 0")?;
    let k = mu.abs().max(sigma);
    Ok(scalar_model("gbm1d", 2.0, Expr::affine(0.0, vec![mu]), sigma, killing, k, mu.abs()))
}

/// SABR in `(F, sigma)`: `dF = sigma F^{beta_sabr} dW1`, `d sigma = nu sigma dW2`.
/// The volatility is the degenerate coordinate with beta = 2.
pub fn sabr(nu: f64, corr: f64, beta_sabr: f64, killing: f64) -> Result<DiffusionModel> {
    require(nu > 0.0, "nu", "must be > 0")?;
    require(corr > -1.0 && corr < 1.0, "rho", "must lie in (-1, 1)")?;
    require((0.0..=1.0).contains(&beta_sabr), "beta_sabr", "must lie in [0, 1]")?;
    require(killing > 0.0, "killing", "must be > 0")?;
    let row = unit_row_with_correlation(&RHO2, corr);
    let lam = min_eigenvalue(&[1.0, corr * nu, corr * nu, nu * nu], 2);
    let mut notes = vec!["coordinates (F, sigma); the volatility sigma is the degenerate coordinate".to_string()];
    if beta_sabr > 0.0 {
        notes.push("beta_sabr > 0 breaks uniform ellipticity and linear growth at F = 0".into());
    }
    Ok(DiffusionModel {
        name: "sabr".into(),
        dim: 2,
        noise_dim: 2,
        beta: 2.0,
        drift: vec![Expr::constant(0.0), Expr::constant(0.0)],
        reduced_vol: vec![vec![
            Expr::power(0, row[0], beta_sabr),
            Expr::power(0, row[1], beta_sabr),
        ]],
        rho: RHO2.to_vec(),
        sigma0: Expr::constant(nu),
        killing: Expr::constant(killing),
        c0: killing,
        growth_k: (1.0 + nu * nu).sqrt(),
        ellipticity: lam * (1.0 - 1e-9),
        holder: Some(HolderData {
            gamma: 1.0,
            lipschitz: 1e-12,
            radius: 1.0,
        }),
        sigma0_locally_constant: true,
        notes,
    })
}
