//! Optimal stopping for obstacle problems: least-squares Monte Carlo over a
//! grid of exercise dates, and continuation-region rules read off a PDE
//! obstacle solution.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::domain::{DomainSpec, Face};
use crate::error::{Error, Result};
use crate::fk_estimate::{auto_horizon, j_functional, truncation_bound, Estimate, StoppingRule};
use crate::model::DiffusionModel;
use crate::pde_oracle::PdeSolution;
use crate::problem::{ProblemKind, ProblemSpec, ScalarField, Variant};
use crate::simulate::{exp_trapezoid, SimConfig, Walker};
use crate::stats::{batched, with_threads, CompensatedSum};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LsmcConfig {
    /// Exercise dates after the start (the last one is the horizon).
    pub dates: usize,
    /// Total polynomial degree; 3, or 5 in one dimension, when absent.
    pub degree: Option<usize>,
    /// Regress only where `psi > 0`.
    pub itm_only: bool,
    pub n_train: usize,
    /// Largest accepted condition number of a regression design matrix.
    pub max_condition: f64,
}

impl Default for LsmcConfig {
    fn default() -> Self {
        LsmcConfig {
            dates: 50,
            degree: None,
            itm_only: true,
            n_train: 50_000,
            max_condition: 1e10,
        }
    }
}

/// Least-squares fit of the continuation value at one date.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DateFit {
    pub exponents: Vec<Vec<u32>>,
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
    pub coef: Vec<f64>,
}

impl DateFit {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let z: Vec<f64> = x.iter().zip(&self.shift).zip(&self.scale).map(|((v, s), c)| (v - s) / c).collect();
        self.exponents
            .iter()
            .zip(&self.coef)
            .map(|(e, c)| c * e.iter().zip(&z).map(|(p, v)| v.powi(*p as i32)).product::<f64>())
            .sum()
    }
}

#[derive(Clone)]
pub enum PolicyKind {
    Immediate,
    Never,
    /// Stop when `u - psi <= tol` for a PDE obstacle solution `u`.
    Region { solution: Arc<PdeSolution>, tol: f64 },
    /// Stop at an exercise date when `psi >= ` the fitted continuation value
    /// (and `psi > 0` for in-the-money fits). `fits[0]` belongs to the start.
    Regression { fits: Vec<Option<DateFit>>, start_continuation: f64, itm_only: bool },
}

/// A stopping rule together with the data needed to evaluate it.
#[derive(Clone)]
pub struct StoppingPolicy {
    pub kind: PolicyKind,
    /// Exercise dates (regression policies); empty otherwise.
    pub time_grid: Vec<f64>,
    pub psi: Option<ScalarField>,
}

impl std::fmt::Debug for StoppingPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "StoppingPolicy({:?})", self.summary())
    }
}

/// Serializable description of a policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub kind: String,
    pub dates: usize,
    pub fitted_dates: usize,
    pub stop_at_start: Option<bool>,
}

impl StoppingPolicy {
    pub fn immediate() -> Self {
        StoppingPolicy {
            kind: PolicyKind::Immediate,
            time_grid: Vec::new(),
            psi: None,
        }
    }

    pub fn never() -> Self {
        StoppingPolicy {
            kind: PolicyKind::Never,
            time_grid: Vec::new(),
            psi: None,
        }
    }

    pub fn summary(&self) -> PolicySummary {
        match &self.kind {
            PolicyKind::Immediate => PolicySummary {
                kind: "immediate".into(),
                dates: 0,
                fitted_dates: 0,
                stop_at_start: Some(true),
            },
            PolicyKind::Never => PolicySummary {
                kind: "never".into(),
                dates: 0,
                fitted_dates: 0,
                stop_at_start: Some(false),
            },
            PolicyKind::Region { solution, .. } => PolicySummary {
                kind: "region".into(),
                dates: solution.times.len(),
                fitted_dates: 0,
                stop_at_start: None,
            },
            PolicyKind::Regression { fits, .. } => PolicySummary {
                kind: "regression".into(),
                dates: self.time_grid.len(),
                fitted_dates: fits.iter().filter(|f| f.is_some()).count(),
                stop_at_start: None,
            },
        }
    }

    fn date_index(&self, t: f64) -> Option<usize> {
        let g = &self.time_grid;
        if g.len() < 2 {
            return None;
        }
        let tol = 1e-7 * (g[1] - g[0]);
        let j = g.partition_point(|s| *s < t - tol);
        (j < g.len() && (g[j] - t).abs() <= tol).then_some(j)
    }
}

impl StoppingRule for StoppingPolicy {
    fn should_stop(&self, t: f64, x: &[f64]) -> bool {
        match &self.kind {
            PolicyKind::Immediate => true,
            PolicyKind::Never => false,
            PolicyKind::Region { solution, tol } => {
                let psi = self.psi.as_ref().expect("region policies carry psi");
                solution.value_at(t, x) - psi.eval(t, x) <= *tol
            }
            PolicyKind::Regression {
                fits,
                start_continuation,
                itm_only,
            } => {
                let Some(j) = self.date_index(t) else { return false };
                let psi = self.psi.as_ref().expect("regression policies carry psi").eval(t, x);
                if *itm_only && psi <= 0.0 {
                    return false;
                }
                if j == 0 {
                    return psi >= *start_continuation;
                }
                match &fits[j] {
                    Some(f) => psi >= f.predict(x),
                    None => false,
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct LsmcResult {
    /// Fresh paths under the learned policy (biased low).
    pub estimate: Estimate,
    /// In-sample value on the training paths.
    pub value_high: f64,
    pub policy: StoppingPolicy,
    pub degrees: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Exponents of all monomials in `d` variables of total degree `<= p`.
pub fn monomials(d: usize, p: usize) -> Vec<Vec<u32>> {
    fn rec(d: usize, left: usize, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if cur.len() == d {
            out.push(cur.clone());
            return;
        }
        for k in 0..=left {
            cur.push(k as u32);
            rec(d, left - k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(d, p, &mut Vec::new(), &mut out);
    out.sort_by_key(|e| e.iter().sum::<u32>());
    out
}

/// Fit `y ~ basis(x)`; `None` when even degree 0 has too few samples.
fn fit(xs: &[&[f64]], ys: &[f64], degree: usize, max_condition: f64, date: usize, warnings: &mut Vec<String>) -> Result<Option<(DateFit, usize)>> {
    let n = xs.len();
    if n == 0 {
        return Ok(None);
    }
    let d = xs[0].len();
    let mut shift = vec![0.0; d];
    let mut scale = vec![0.0; d];
    for i in 0..d {
        let m = xs.iter().map(|x| x[i]).sum::<f64>() / n as f64;
        let v = xs.iter().map(|x| (x[i] - m).powi(2)).sum::<f64>() / n as f64;
        shift[i] = m;
        scale[i] = if v > 0.0 { v.sqrt() } else { 1.0 };
    }
    let mut deg = degree;
    loop {
        let exps = monomials(d, deg);
        if n >= 2 * exps.len() {
            let a = DMatrix::from_fn(n, exps.len(), |r, c| {
                exps[c]
                    .iter()
                    .enumerate()
                    .map(|(i, p)| ((xs[r][i] - shift[i]) / scale[i]).powi(*p as i32))
                    .product::<f64>()
            });
            let svd = a.svd(true, true);
            let smax = svd.singular_values.max();
            let smin = svd.singular_values.min();
            let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
            if cond <= max_condition {
                let b = DVector::from_column_slice(ys);
                let coef = svd
                    .solve(&b, 0.0)
                    .map_err(|e| Error::SolverDiverged(format!("regression solve: {e}")))?;
                return Ok(Some((
                    DateFit {
                        exponents: exps,
                        shift,
                        scale,
                        coef: coef.iter().cloned().collect(),
                    },
                    deg,
                )));
            }
            if deg == 0 {
                return Err(Error::RegressionIllConditioned { date, condition: cond });
            }
            warnings.push(format!(
                "date {date}: {}; retrying with degree {}",
                Error::RegressionIllConditioned { date, condition: cond },
                deg - 1
            ));
        } else if deg == 0 {
            return Ok(None);
        }
        deg -= 1;
    }
}

struct Training {
    /// State at each date 1..K-1 (`None` once exited).
    states: Vec<Vec<Option<Vec<f64>>>>,
    /// Accumulated discount and running cost at each date.
    disc: Vec<Vec<f64>>,
    run: Vec<Vec<f64>>,
    /// Discounted value collected by never stopping after the last date
    /// reached alive.
    cash: Vec<f64>,
    /// Last date index at which the path is alive (exit strictly later).
    alive_until: Vec<usize>,
}

#[allow(clippy::too_many_arguments)]
fn train_paths(model: &DiffusionModel, domain: &DomainSpec, spec: &ProblemSpec, t0: f64, x0: &[f64], dates: &[f64], cfg: &SimConfig, n: usize) -> Result<Training> {
    let k_n = dates.len();
    let t_end = dates[k_n - 1];
    let per = with_threads(cfg.threads, || {
        batched(n, |range| -> Result<Vec<(Vec<Option<Vec<f64>>>, Vec<f64>, Vec<f64>, f64, usize)>> {
            let mut out = Vec::with_capacity(range.len());
            for i in range {
                let mut w = Walker::new(model, domain, cfg, x0, t0, t_end, cfg.noise(i as u64))?;
                let mut states = vec![None; k_n];
                let mut disc = vec![0.0; k_n];
                let mut run = vec![0.0; k_n];
                let mut running = CompensatedSum::default();
                let mut fx = spec.f.eval(w.t, &w.x);
                let mut e0 = (-w.discount).exp();
                let mut next = 1;
                let mut alive_until = 0;
                loop {
                    let exit = match spec.variant {
                        Variant::Tau => w.tau.clone(),
                        Variant::Lambda => w.lambda.clone(),
                    };
                    if let Some(r) = exit {
                        let h = if r.face == Face::Horizon {
                            spec.terminal_data().eval(r.time, &r.point)
                        } else {
                            spec.g.eval(r.time, &r.point)
                        };
                        let cash = (-r.discount).exp() * h + running.value();
                        out.push((states, disc, run, cash, alive_until));
                        break;
                    }
                    w.advance();
                    let f1 = spec.f.eval(w.t, &w.x);
                    let e1 = (-w.discount).exp();
                    running.add(exp_trapezoid(w.last_h, w.last_k, e0, e1, fx, f1));
                    e0 = e1;
                    fx = f1;
                    let exited = match spec.variant {
                        Variant::Tau => w.tau.is_some(),
                        Variant::Lambda => w.lambda.is_some(),
                    };
                    let tol = 1e-7 * (dates[1] - dates[0]);
                    while next < k_n - 1 && w.t >= dates[next] - tol {
                        // an exit that lands on the date wins the tie
                        if !exited && (w.t - dates[next]).abs() <= tol {
                            states[next] = Some(w.x.clone());
                            disc[next] = w.discount;
                            run[next] = running.value();
                            alive_until = next;
                        }
                        next += 1;
                    }
                }
            }
            Ok(out)
        })
    });
    let mut t = Training {
        states: vec![Vec::with_capacity(n); k_n],
        disc: vec![Vec::with_capacity(n); k_n],
        run: vec![Vec::with_capacity(n); k_n],
        cash: Vec::with_capacity(n),
        alive_until: Vec::with_capacity(n),
    };
    for b in per {
        for (s, d, r, c, a) in b? {
            for k in 0..k_n {
                t.states[k].push(s[k].clone());
                t.disc[k].push(d[k]);
                t.run[k].push(r[k]);
            }
            t.cash.push(c);
            t.alive_until.push(a);
        }
    }
    Ok(t)
}

/// Least-squares Monte Carlo for a parabolic obstacle problem at `(t, x)`.
pub fn lsmc_value(
    model: &DiffusionModel,
    domain: &DomainSpec,
    spec: &ProblemSpec,
    t: f64,
    x: &[f64],
    cfg: &SimConfig,
    lsmc: &LsmcConfig,
) -> Result<LsmcResult> {
    if spec.kind != ProblemKind::ParabolicObstacle {
        return Err(Error::Config("lsmc_value needs a parabolic obstacle problem".into()));
    }
    cfg.check()?;
    let cfg = &cfg.for_scenario(spec.scenario);
    spec.check(domain)?;
    let psi = spec.psi.clone().ok_or_else(|| Error::MissingField("psi".into()))?;
    let t_end = spec.terminal_time()?;
    if lsmc.dates < 1 {
        return Err(Error::Config("lsmc.dates must be >= 1".into()));
    }
    let k_n = lsmc.dates + 1;
    let dates: Vec<f64> = (0..k_n).map(|k| t + (t_end - t) * k as f64 / lsmc.dates as f64).collect();
    // simulation step dividing the date spacing
    let gap = dates[1] - dates[0];
    let m = (gap / cfg.dt).ceil().max(1.0);
    let sim = SimConfig {
        dt: gap / m,
        antithetic: false,
        ..cfg.clone()
    };
    let degree = lsmc.degree.unwrap_or(if model.dim == 1 { 5 } else { 3 });
    let mut warnings = Vec::new();
    let train = train_paths(model, domain, spec, t, x, &dates, &sim, lsmc.n_train)?;
    let n = lsmc.n_train;
    let mut cash = train.cash.clone();
    let mut fits: Vec<Option<DateFit>> = vec![None; k_n];
    let mut degrees = vec![0; k_n];
    for k in (1..k_n - 1).rev() {
        let mut idx = Vec::new();
        let mut pay = Vec::new();
        for i in 0..n {
            if train.alive_until[i] < k {
                continue;
            }
            let Some(s) = train.states[k][i].as_ref() else { continue };
            let p = psi.eval(dates[k], s);
            if lsmc.itm_only && p <= 0.0 {
                continue;
            }
            idx.push(i);
            pay.push(p);
        }
        let xs: Vec<&[f64]> = idx.iter().map(|i| train.states[k][*i].as_deref().unwrap()).collect();
        // continuation in date-k money
        let ys: Vec<f64> = idx
            .iter()
            .map(|i| (cash[*i] - train.run[k][*i]) * train.disc[k][*i].exp())
            .collect();
        if let Some((f, deg)) = fit(&xs, &ys, degree, lsmc.max_condition, k, &mut warnings)? {
            for (j, i) in idx.iter().enumerate() {
                if pay[j] >= f.predict(xs[j]) {
                    cash[*i] = (-train.disc[k][*i]).exp() * pay[j] + train.run[k][*i];
                }
            }
            degrees[k] = deg;
            fits[k] = Some(f);
        }
    }
    let cont = cash.iter().sum::<f64>() / n as f64;
    let p0 = psi.eval(t, x);
    let value_high = if !lsmc.itm_only || p0 > 0.0 { cont.max(p0) } else { cont };
    let policy = StoppingPolicy {
        kind: PolicyKind::Regression {
            fits,
            start_continuation: cont,
            itm_only: lsmc.itm_only,
        },
        time_grid: dates,
        psi: Some(psi),
    };
    let resim = SimConfig {
        seed: cfg.seed ^ 0x5851_f42d_4c95_7f2d,
        ..sim
    };
    let estimate = j_functional(model, domain, spec, t, x, &policy, &resim)?;
    Ok(LsmcResult {
        estimate,
        value_high,
        policy,
        degrees,
        warnings,
    })
}

/// The parabolic problem on `[0, T]` used for an elliptic obstacle problem:
/// same data, terminal payoff `max(psi, 0)`.
pub fn truncated_obstacle_spec(spec: &ProblemSpec, horizon: f64) -> Result<ProblemSpec> {
    let psi = spec.psi.clone().ok_or_else(|| Error::MissingField("psi".into()))?;
    let k = psi.growth_k;
    let p2 = psi.clone();
    let mut out = spec.clone();
    out.kind = ProblemKind::ParabolicObstacle;
    out.horizon = Some(horizon);
    out.terminal = Some(ScalarField::custom(move |t, x| p2.eval(t, x).max(0.0), k));
    Ok(out)
}

/// Elliptic obstacle value at `x` via a parabolic problem on `[0, t_max]`.
pub fn elliptic_obstacle_value(
    model: &DiffusionModel,
    domain: &DomainSpec,
    spec: &ProblemSpec,
    x: &[f64],
    cfg: &SimConfig,
    lsmc: &LsmcConfig,
) -> Result<LsmcResult> {
    if spec.kind != ProblemKind::EllipticObstacle {
        return Err(Error::Config("elliptic_obstacle_value needs an elliptic obstacle problem".into()));
    }
    spec.check(domain)?;
    let horizon = auto_horizon(model, domain, spec, x, cfg)?;
    let para = truncated_obstacle_spec(spec, horizon)?;
    let mut r = lsmc_value(model, domain, &para, 0.0, x, cfg, lsmc)?;
    let mut notes = Vec::new();
    r.estimate.truncation_bias_bound = truncation_bound(model, domain, spec, x, horizon, &mut notes);
    r.estimate.diagnostics.horizon = horizon;
    r.estimate.diagnostics.notes.extend(notes);
    Ok(r)
}

/// Default continuation tolerance `1e-8 (1 + max |u|)`.
pub fn default_region_tol(solution: &PdeSolution) -> f64 {
    let scale = solution.values.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    1e-8 * (1.0 + scale)
}

/// Region policy with continuation set `{u - psi > tol}`.
pub fn policy_from_pde(solution: Arc<PdeSolution>, psi: &ScalarField, region_tol: Option<f64>) -> Result<StoppingPolicy> {
    if solution.psi.is_none() {
        return Err(Error::MissingField("psi (the PDE solution is not an obstacle solution)".into()));
    }
    let tol = region_tol.unwrap_or_else(|| default_region_tol(&solution));
    Ok(StoppingPolicy {
        kind: PolicyKind::Region { solution, tol },
        time_grid: Vec::new(),
        psi: Some(psi.clone()),
    })
}

/// Points where the exercise region `{u = psi, psi > 0}` starts or ends
/// along axis 0, per time slab, as `(t, x)` rows (midpoints between the two
/// nodes). Grid lines run along axis 0 with the other coordinates fixed.
pub fn exercise_boundary(solution: &PdeSolution) -> Result<Vec<Vec<f64>>> {
    let psi = solution
        .psi
        .as_ref()
        .ok_or_else(|| Error::MissingField("psi (the PDE solution is not an obstacle solution)".into()))?;
    let g = &solution.grid;
    if g.dim() > 2 {
        return Err(Error::Config("exercise boundaries are only traced for d <= 2".into()));
    }
    let n0 = g.axes[0].len();
    let s0 = g.stride(0);
    let lines = g.len() / n0;
    let mut out = Vec::new();
    for (j, t) in solution.times.iter().enumerate() {
        let u = &solution.values[j];
        let p = &psi[j];
        for line in 0..lines {
            let active = |i: usize| {
                let k = i * s0 + line;
                !g.kinds[k].is_dirichlet() && p[k] > 0.0 && u[k] - p[k] <= 1e-10 * (1.0 + p[k].abs())
            };
            for i in 1..n0 - 1 {
                if active(i) != active(i + 1) && i + 1 < n0 - 1 {
                    let mut row = vec![*t];
                    let a = g.node(i * s0 + line);
                    let b = g.node((i + 1) * s0 + line);
                    row.extend(a.iter().zip(&b).map(|(p, q)| 0.5 * (p + q)));
                    out.push(row);
                }
            }
        }
    }
    Ok(out)
}

/// Largest move of the exercise boundary between a coarse and a fine
/// solution, in coarse cells. Errors when it exceeds two cells.
pub fn check_free_boundary(coarse: &PdeSolution, fine: &PdeSolution) -> Result<f64> {
    let a = exercise_boundary(coarse)?;
    let b = exercise_boundary(fine)?;
    let h = coarse.grid.max_spacing();
    let mut worst: f64 = 0.0;
    for p in &a {
        let near = b
            .iter()
            .filter(|q| (q[0] - p[0]).abs() <= 1e-12 * (1.0 + p[0].abs()))
            .filter(|q| q[2..] == p[2..] || p.len() == 2)
            .map(|q| (q[1] - p[1]).abs())
            .fold(f64::INFINITY, f64::min);
        if near.is_finite() {
            worst = worst.max(near / h);
        }
    }
    if worst > 2.0 {
        return Err(Error::GridTooCoarse(format!(
            "free boundary moved by {worst:.2} cells under refinement"
        )));
    }
    Ok(worst)
}
