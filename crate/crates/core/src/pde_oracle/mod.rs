//! Monotone finite differences on tensor grids over a truncated box, used to
//! cross-check the Monte Carlo estimators.
//!
//! Diffusion uses central second differences, cross terms a sign-adapted
//! seven-point stencil, and drift central differences where they keep the
//! off-diagonals non-positive and one-sided upwinding elsewhere. The result
//! is an M-matrix, checked row by row.

pub mod linalg;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boundary::{classify_origin, Scenario};
use crate::domain::DomainSpec;
use crate::error::{Error, Result};
use crate::model::DiffusionModel;
use crate::problem::{BoundaryMode, ProblemSpec, Support};
use linalg::{complementarity, policy_iteration, psor, solve_linear, BandedLu, SparseRows};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    /// Target number of cells per axis; missing entries use 40 (200 in 1D).
    pub cells: Vec<usize>,
    /// Truncation `R` for unbounded axes (`|x_i| <= R`, `x_d <= R`).
    pub far_field: f64,
    /// Geometric grading ratio toward `x_d = 0`. `None` picks 1.1 without
    /// cross diffusion and 1.0 (uniform) with it.
    pub grading: Option<f64>,
    /// First `x_d` cell as a fraction of the `x_d` extent (graded grids).
    pub first_cell: f64,
    pub time_steps: usize,
    pub theta: f64,
    /// Leading implicit Euler half-steps (Rannacher start), counted in full steps.
    pub rannacher_steps: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub omega: f64,
    pub complementarity_tol: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            cells: Vec::new(),
            far_field: 4.0,
            grading: None,
            first_cell: 1e-3,
            time_steps: 200,
            theta: 0.5,
            rannacher_steps: 0,
            tol: 1e-10,
            max_iter: 100_000,
            omega: 1.5,
            complementarity_tol: 1e-8,
        }
    }
}

impl OracleConfig {
    pub fn check(&self) -> Result<()> {
        if !(0.5..=1.0).contains(&self.theta) {
            return Err(Error::Config("oracle.theta must lie in [0.5, 1]".into()));
        }
        if let Some(q) = self.grading {
            if !(1.0..=1.2).contains(&q) {
                return Err(Error::Config("oracle.grading must lie in [1, 1.2]".into()));
            }
        }
        if !(self.far_field > 0.0) || self.time_steps == 0 || !(self.first_cell > 0.0 && self.first_cell < 1.0) {
            return Err(Error::Config("oracle: far_field, time_steps and first_cell must be positive".into()));
        }
        if !(self.omega > 0.0 && self.omega < 2.0) {
            return Err(Error::Config("oracle.omega must lie in (0, 2)".into()));
        }
        if self.cells.iter().any(|n| *n < 2) {
            return Err(Error::Config("oracle.cells entries must be >= 2".into()));
        }
        Ok(())
    }

    fn cells_for(&self, axis: usize, d: usize) -> usize {
        self.cells.get(axis).copied().unwrap_or(if d == 1 { 200 } else { 40 })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Interior,
    /// `x_d = 0` without data: the degenerate equation is imposed.
    Gamma0,
    /// `x_d = 0` with Dirichlet data.
    Gamma0Dirichlet,
    Gamma1,
    /// Artificial face from truncating an unbounded axis.
    FarField,
}

impl NodeKind {
    pub fn is_dirichlet(self) -> bool {
        matches!(self, NodeKind::Gamma0Dirichlet | NodeKind::Gamma1 | NodeKind::FarField)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub axes: Vec<Vec<f64>>,
    pub kinds: Vec<NodeKind>,
}

/// Cell sizes growing from `h0` by `q` up to `hmax`, rescaled to fill `len`.
fn graded_axis(lo: f64, hi: f64, cells: usize, q: f64, first: f64) -> Vec<f64> {
    let len = hi - lo;
    let hmax = len / cells as f64;
    let h0 = (first * len).min(hmax);
    let mut widths = Vec::new();
    let mut h = h0;
    let mut total = 0.0;
    while total < len {
        widths.push(h);
        total += h;
        h = (h * q).min(hmax);
    }
    let scale = len / total;
    let mut pts = vec![lo];
    let mut x = lo;
    for w in widths {
        x += w * scale;
        pts.push(x);
    }
    *pts.last_mut().unwrap() = hi;
    pts
}

fn uniform_axis(lo: f64, hi: f64, cells: usize) -> Vec<f64> {
    (0..=cells).map(|k| lo + (hi - lo) * k as f64 / cells as f64).collect()
}

fn has_cross_diffusion(model: &DiffusionModel) -> bool {
    let d = model.dim;
    if d < 2 {
        return false;
    }
    let g = model.default_grid();
    g.points().iter().step_by(7).any(|x| {
        let a = model.reduced_diffusion(x);
        (0..d).any(|i| (0..d).any(|k| i != k && a[i * d + k].abs() > 1e-14))
    })
}

impl Grid {
    pub fn build(model: &DiffusionModel, domain: &DomainSpec, mode: BoundaryMode, cfg: &OracleConfig) -> Result<Grid> {
        cfg.check()?;
        let d = domain.dim();
        if model.dim != d {
            return Err(Error::Config("model and domain dimensions differ".into()));
        }
        let r = cfg.far_field;
        let q = cfg.grading.unwrap_or(if has_cross_diffusion(model) { 1.0 } else { 1.1 });
        let mut axes = Vec::with_capacity(d);
        for i in 0..d {
            let n = cfg.cells_for(i, d);
            if i == d - 1 {
                let hi = domain.upper[i].unwrap_or(r);
                axes.push(if q > 1.0 {
                    graded_axis(0.0, hi, n, q, cfg.first_cell)
                } else {
                    uniform_axis(0.0, hi, n)
                });
            } else {
                let lo = domain.lower[i].unwrap_or(-r);
                let hi = domain.upper[i].unwrap_or(r);
                if !(lo < hi) {
                    return Err(Error::InvalidDomain(format!("axis {i} is empty after truncation at {r}")));
                }
                axes.push(uniform_axis(lo, hi, n));
            }
        }
        let mut g = Grid { axes, kinds: Vec::new() };
        let n = g.len();
        let mut kinds = vec![NodeKind::Interior; n];
        let mut idx = vec![0; d];
        for (k, kind) in kinds.iter_mut().enumerate() {
            g.unflatten(k, &mut idx);
            let mut dirichlet = None;
            let mut gamma0 = false;
            for i in 0..d {
                let last = g.axes[i].len() - 1;
                for (at, bound) in [(0usize, domain.lower[i]), (last, domain.upper[i])] {
                    if idx[i] != at {
                        continue;
                    }
                    if i == d - 1 && at == 0 {
                        gamma0 = true;
                    } else if bound.is_some() {
                        dirichlet = Some(NodeKind::Gamma1);
                    } else if dirichlet.is_none() {
                        dirichlet = Some(NodeKind::FarField);
                    }
                }
            }
            *kind = match (dirichlet, gamma0, mode) {
                (Some(kd), _, _) => kd,
                (None, true, BoundaryMode::Partial) => NodeKind::Gamma0,
                (None, true, BoundaryMode::Full) => NodeKind::Gamma0Dirichlet,
                _ => NodeKind::Interior,
            };
        }
        g.kinds = kinds;
        Ok(g)
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stride of axis `i` in the flat (row-major, last axis fastest) index.
    pub fn stride(&self, i: usize) -> usize {
        self.axes[i + 1..].iter().map(Vec::len).product()
    }

    pub fn unflatten(&self, mut k: usize, idx: &mut [usize]) {
        for i in (0..self.dim()).rev() {
            let n = self.axes[i].len();
            idx[i] = k % n;
            k /= n;
        }
    }

    pub fn node(&self, k: usize) -> Vec<f64> {
        let mut idx = vec![0; self.dim()];
        self.unflatten(k, &mut idx);
        idx.iter().enumerate().map(|(i, j)| self.axes[i][*j]).collect()
    }

    /// Largest cell width over all axes.
    pub fn max_spacing(&self) -> f64 {
        self.axes
            .iter()
            .flat_map(|a| a.windows(2).map(|w| w[1] - w[0]))
            .fold(0.0, f64::max)
    }

    /// Multilinear interpolation of nodal values; points outside are clamped.
    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> f64 {
        let d = self.dim();
        let mut base = 0;
        let mut lo = vec![0usize; d];
        let mut w = vec![0.0; d];
        for i in 0..d {
            let a = &self.axes[i];
            let xi = x[i].clamp(a[0], a[a.len() - 1]);
            let j = (a.partition_point(|v| *v <= xi).max(1) - 1).min(a.len() - 2);
            lo[i] = j;
            w[i] = (xi - a[j]) / (a[j + 1] - a[j]);
            base += j * self.stride(i);
        }
        let mut s = 0.0;
        for corner in 0..(1usize << d) {
            let mut k = base;
            let mut wt = 1.0;
            for i in 0..d {
                if corner >> i & 1 == 1 {
                    k += self.stride(i);
                    wt *= w[i];
                } else {
                    wt *= 1.0 - w[i];
                }
            }
            if wt != 0.0 {
                s += wt * values[k];
            }
        }
        s
    }
}

/// Discrete generator: `A` on equation rows, identity on Dirichlet rows.
#[derive(Clone, Debug)]
pub struct Operator {
    pub matrix: SparseRows,
    pub dirichlet: Vec<bool>,
    /// How many axis-rows fell back to upwind drift.
    pub upwinded: usize,
}

fn push(row: &mut Vec<(usize, f64)>, col: usize, v: f64) {
    if let Some(e) = row.iter_mut().find(|e| e.0 == col) {
        e.1 += v;
    } else {
        row.push((col, v));
    }
}

/// Assemble one equation row. `upwind[i]` forces one-sided drift on axis `i`.
fn assemble_row(model: &DiffusionModel, grid: &Grid, k: usize, idx: &[usize], x: &[f64], upwind: &[bool]) -> Result<(f64, Vec<(usize, f64)>)> {
    let d = grid.dim();
    let a = model.diffusion(x);
    let mut b = vec![0.0; d];
    model.drift_into(x, &mut b);
    let mut diag = model.killing_at(x);
    let mut row = Vec::with_capacity(4 * d + 4 * d * d);
    let mut hbar = vec![0.0; d];
    let mut nbr = vec![(None, None); d];
    for i in 0..d {
        let ax = &grid.axes[i];
        let s = grid.stride(i);
        let minus = (idx[i] > 0).then(|| (k - s, x[i] - ax[idx[i] - 1]));
        let plus = (idx[i] + 1 < ax.len()).then(|| (k + s, ax[idx[i] + 1] - x[i]));
        nbr[i] = (minus, plus);
        let aii = a[i * d + i];
        let bi = b[i];
        match (minus, plus) {
            (Some((km, hm)), Some((kp, hp))) => {
                hbar[i] = 0.5 * (hm + hp);
                let sum = hm + hp;
                if upwind[i] {
                    push(&mut row, kp, -aii / (hp * sum));
                    push(&mut row, km, -aii / (hm * sum));
                    diag += aii / (hp * hm);
                    if bi > 0.0 {
                        push(&mut row, kp, -bi / hp);
                        diag += bi / hp;
                    } else {
                        push(&mut row, km, bi / hm);
                        diag -= bi / hm;
                    }
                } else {
                    push(&mut row, kp, -(aii + bi * hm) / (hp * sum));
                    push(&mut row, km, -(aii - bi * hp) / (hm * sum));
                    diag += (aii + bi * (hm - hp)) / (hp * hm);
                }
            }
            (None, Some((kp, hp))) => {
                // only the x_d = 0 face gets here; a vanishes there
                if aii.abs() > 1e-14 {
                    return Err(Error::NonMonotoneStencil {
                        node: x.to_vec(),
                        detail: format!("one-sided row on axis {i} with nonzero diffusion {aii}"),
                    });
                }
                if bi < 0.0 {
                    return Err(Error::NonMonotoneStencil {
                        node: x.to_vec(),
                        detail: format!("drift {bi} points out of the half-space"),
                    });
                }
                push(&mut row, kp, -bi / hp);
                diag += bi / hp;
            }
            _ => {
                return Err(Error::NonMonotoneStencil {
                    node: x.to_vec(),
                    detail: format!("equation row without neighbours on axis {i}"),
                })
            }
        }
    }
    for i in 0..d {
        for j in i + 1..d {
            let aij = a[i * d + j];
            if aij == 0.0 {
                continue;
            }
            let (Some((_, _)), Some((_, _))) = nbr[i] else { continue };
            let (Some((_, _)), Some((_, _))) = nbr[j] else { continue };
            let (si, sj) = (grid.stride(i), grid.stride(j));
            let w = aij.abs() / (2.0 * hbar[i] * hbar[j]);
            // axis neighbours
            for kk in [k + si, k - si, k + sj, k - sj] {
                push(&mut row, kk, w);
            }
            diag -= 2.0 * w;
            if aij > 0.0 {
                push(&mut row, k + si + sj, -w);
                push(&mut row, k - si - sj, -w);
            } else {
                push(&mut row, k + si - sj, -w);
                push(&mut row, k - si + sj, -w);
            }
        }
    }
    Ok((diag, row))
}

fn row_is_monotone(diag: f64, row: &[(usize, f64)]) -> bool {
    let scale = diag.abs().max(1e-300);
    diag > 0.0 && row.iter().all(|(_, v)| *v <= 1e-12 * scale)
}

/// Assemble the discrete generator on `grid`.
pub fn discretize(model: &DiffusionModel, grid: &Grid) -> Result<Operator> {
    let d = grid.dim();
    let n = grid.len();
    let rows: Vec<Result<(f64, Vec<(usize, f64)>, usize)>> = (0..n)
        .into_par_iter()
        .map(|k| {
            if grid.kinds[k].is_dirichlet() {
                return Ok((1.0, Vec::new(), 0));
            }
            let mut idx = vec![0; d];
            grid.unflatten(k, &mut idx);
            let x = grid.node(k);
            let mut upwind = vec![false; d];
            let (mut diag, mut row) = assemble_row(model, grid, k, &idx, &x, &upwind)?;
            let mut count = 0;
            if !row_is_monotone(diag, &row) {
                // upwind the axes whose neighbours went positive
                for i in 0..d {
                    let s = grid.stride(i);
                    let bad = row.iter().any(|(c, v)| (*c == k + s || Some(*c) == k.checked_sub(s)) && *v > 0.0);
                    if bad {
                        upwind[i] = true;
                        count += 1;
                    }
                }
                if count == 0 {
                    upwind.fill(true);
                    count = d;
                }
                (diag, row) = assemble_row(model, grid, k, &idx, &x, &upwind)?;
                if !row_is_monotone(diag, &row) {
                    let worst = row.iter().map(|e| e.1).fold(f64::NEG_INFINITY, f64::max);
                    return Err(Error::NonMonotoneStencil {
                        node: x,
                        detail: format!("diagonal {diag:e}, largest off-diagonal {worst:e} after upwinding"),
                    });
                }
            }
            row.sort_by_key(|e| e.0);
            Ok((diag, row, count))
        })
        .collect();
    let mut diag = Vec::with_capacity(n);
    let mut off = Vec::with_capacity(n);
    let mut upwinded = 0;
    for r in rows {
        let (dg, row, c) = r?;
        diag.push(dg);
        off.push(row);
        upwinded += c;
    }
    Ok(Operator {
        matrix: SparseRows { diag, off },
        dirichlet: grid.kinds.iter().map(|k| k.is_dirichlet()).collect(),
        upwinded,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdeSolution {
    pub grid: Grid,
    /// Slab times, increasing; a single `0` for elliptic problems.
    pub times: Vec<f64>,
    /// Nodal values per slab.
    pub values: Vec<Vec<f64>>,
    /// Largest relative linear residual over all solves.
    pub residual: f64,
    /// Largest scaled complementarity residual (obstacle problems).
    pub complementarity: Option<f64>,
    /// Nodes with `u = psi` on the first slab (obstacle problems).
    pub active: Option<Vec<bool>>,
    /// Obstacle on each slab (obstacle problems).
    pub psi: Option<Vec<Vec<f64>>>,
    pub iterations: usize,
    pub upwinded_rows: usize,
    pub scenario: Scenario,
}

impl PdeSolution {
    /// Multilinear in space, linear in time.
    pub fn value_at(&self, t: f64, x: &[f64]) -> f64 {
        self.interp(&self.values, t, x)
    }

    /// `u - psi` at `(t, x)`; `None` without an obstacle.
    pub fn gap_at(&self, t: f64, x: &[f64]) -> Option<f64> {
        let psi = self.psi.as_ref()?;
        Some(self.interp(&self.values, t, x) - self.interp(psi, t, x))
    }

    fn interp(&self, slabs: &[Vec<f64>], t: f64, x: &[f64]) -> f64 {
        if slabs.len() == 1 {
            return self.grid.interpolate(&slabs[0], x);
        }
        let ts = &self.times;
        let t = t.clamp(ts[0], ts[ts.len() - 1]);
        let j = (ts.partition_point(|v| *v <= t).max(1) - 1).min(ts.len() - 2);
        let w = (t - ts[j]) / (ts[j + 1] - ts[j]);
        let a = self.grid.interpolate(&slabs[j], x);
        if w == 0.0 {
            return a;
        }
        (1.0 - w) * a + w * self.grid.interpolate(&slabs[j + 1], x)
    }

    pub fn is_parabolic(&self) -> bool {
        self.times.len() > 1
    }
}

/// The scenario used for boundary handling: the problem's, or the one from
/// classifying the origin.
pub fn resolve_scenario(model: &DiffusionModel, spec: &ProblemSpec) -> Result<Scenario> {
    match spec.scenario {
        Some(s) => Ok(s),
        None => Ok(classify_origin(model, 1.0)?.scenario),
    }
}

struct Setup {
    grid: Grid,
    op: Operator,
    nodes: Vec<Vec<f64>>,
    scenario: Scenario,
}

fn setup(model: &DiffusionModel, domain: &DomainSpec, spec: &ProblemSpec, cfg: &OracleConfig) -> Result<Setup> {
    spec.check(domain)?;
    let scenario = resolve_scenario(model, spec)?;
    let spec = spec.clone().with_scenario(scenario);
    let mode = spec.boundary_mode();
    if mode == BoundaryMode::Full && spec.g.support == Support::Gamma1Only {
        return Err(Error::BoundaryDataMissing("the boundary condition needs g on x_d = 0".into()));
    }
    let grid = Grid::build(model, domain, mode, cfg)?;
    let op = discretize(model, &grid)?;
    let nodes = (0..grid.len()).map(|k| grid.node(k)).collect();
    Ok(Setup { grid, op, nodes, scenario })
}

fn load(s: &Setup, spec: &ProblemSpec, t: f64) -> Vec<f64> {
    s.nodes
        .par_iter()
        .zip(&s.op.dirichlet)
        .map(|(x, dir)| if *dir { spec.g.eval(t, x) } else { spec.f.eval(t, x) })
        .collect()
}

/// Terminal data on equation rows, `g` on Dirichlet rows.
fn terminal_values(s: &Setup, spec: &ProblemSpec, t: f64) -> Vec<f64> {
    let h = spec.terminal_data();
    s.nodes
        .par_iter()
        .zip(&s.op.dirichlet)
        .map(|(x, dir)| if *dir { spec.g.eval(t, x) } else { h.eval(t, x) })
        .collect()
}

fn rel_residual(a: &SparseRows, u: &[f64], b: &[f64]) -> f64 {
    let mut r = vec![0.0; u.len()];
    a.mul(u, &mut r);
    let num = r.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    let den = b.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
    num / den
}

fn obstacle_values(s: &Setup, spec: &ProblemSpec, t: f64) -> Result<Vec<f64>> {
    let psi = spec.psi.as_ref().ok_or_else(|| Error::MissingField("psi".into()))?;
    Ok(s.nodes.par_iter().map(|x| psi.eval(t, x)).collect())
}

/// Elliptic boundary-value problem `A u = f`, `u = g` on the data faces.
pub fn solve_elliptic(model: &DiffusionModel, domain: &DomainSpec, spec: &ProblemSpec, cfg: &OracleConfig) -> Result<PdeSolution> {
    let s = setup(model, domain, spec, cfg)?;
    let b = load(&s, spec, 0.0);
    let u = solve_linear(&s.op.matrix, &b, cfg.tol, cfg.max_iter)?;
    check_finite(&u)?;
    let residual = rel_residual(&s.op.matrix, &u, &b);
    Ok(PdeSolution {
        upwinded_rows: s.op.upwinded,
        grid: s.grid,
        times: vec![0.0],
        values: vec![u],
        residual,
        complementarity: None,
        active: None,
        psi: None,
        iterations: 1,
        scenario: s.scenario,
    })
}

fn check_finite(u: &[f64]) -> Result<()> {
    if u.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::SolverDiverged("non-finite nodal values".into()))
    }
}

/// Elliptic obstacle problem `min(A u - f, u - psi) = 0`.
pub fn solve_elliptic_obstacle(model: &DiffusionModel, domain: &DomainSpec, spec: &ProblemSpec, cfg: &OracleConfig) -> Result<PdeSolution> {
    let s = setup(model, domain, spec, cfg)?;
    let b = load(&s, spec, 0.0);
    let psi = obstacle_values(&s, spec, 0.0)?;
    let free: Vec<bool> = s.op.dirichlet.iter().map(|d| !d).collect();
    let (u, iters, comp) = lcp(&s.op.matrix, &b, &psi, &free, None, cfg)?;
    let active = active_set(&u, &psi, &free);
    Ok(PdeSolution {
        upwinded_rows: s.op.upwinded,
        grid: s.grid,
        times: vec![0.0],
        values: vec![u],
        residual: comp,
        complementarity: Some(comp),
        active: Some(active),
        psi: Some(vec![psi]),
        iterations: iters,
        scenario: s.scenario,
    })
}

fn active_set(u: &[f64], psi: &[f64], free: &[bool]) -> Vec<bool> {
    (0..u.len())
        .map(|i| free[i] && u[i] - psi[i] <= 1e-10 * (1.0 + psi[i].abs()))
        .collect()
}

/// Policy iteration to the exact discrete solution, then PSOR sweeps to
/// confirm it. Returns values, PSOR sweeps and the complementarity residual.
fn lcp(a: &SparseRows, b: &[f64], psi: &[f64], free: &[bool], start: Option<&[f64]>, cfg: &OracleConfig) -> Result<(Vec<f64>, usize, f64)> {
    let n = a.n();
    let mut u: Vec<f64> = match start {
        Some(s) => (0..n).map(|i| if free[i] { s[i].max(psi[i]) } else { s[i] }).collect(),
        None => psi.to_vec(),
    };
    policy_iteration(a, b, psi, free, &mut u, 200)?;
    for i in 0..n {
        if free[i] {
            u[i] = u[i].max(psi[i]);
        }
    }
    let iters = psor(a, b, psi, free, &mut u, cfg.omega, cfg.tol, cfg.max_iter)?;
    check_finite(&u)?;
    let comp = complementarity(a, &u, b, psi, free);
    if comp > cfg.complementarity_tol {
        return Err(Error::MaxIterations {
            limit: cfg.max_iter,
            residual: comp,
        });
    }
    Ok((u, iters, comp))
}

/// Parabolic problem `-u_t + A u = f` on `[0, T)`, `u(T) = g(T)`, marched
/// backward with the theta scheme (optionally with an obstacle).
pub fn solve_parabolic(model: &DiffusionModel, domain: &DomainSpec, spec: &ProblemSpec, cfg: &OracleConfig) -> Result<PdeSolution> {
    let t_end = spec.terminal_time()?;
    let s = setup(model, domain, spec, cfg)?;
    let obstacle = spec.kind.is_obstacle();
    let n = s.grid.len();
    let steps = cfg.time_steps;
    let dt = t_end / steps as f64;
    let times: Vec<f64> = (0..=steps).map(|k| t_end * k as f64 / steps as f64).collect();
    let free: Vec<bool> = s.op.dirichlet.iter().map(|d| !d).collect();
    let a = &s.op.matrix;

    // (theta, h) -> factored I + theta h A on equation rows
    let schemes: Vec<(f64, f64)> = {
        let mut v = vec![(cfg.theta, dt)];
        if cfg.rannacher_steps > 0 {
            v.push((1.0, 0.5 * dt));
        }
        v
    };
    let mats: Vec<SparseRows> = schemes.iter().map(|(th, h)| a.shifted(1.0, th * h, &free)).collect();
    let lus: Vec<Option<BandedLu>> = if obstacle {
        vec![None, None]
    } else {
        mats.iter().map(|m| BandedLu::factor(m).map(Some)).collect::<Result<_>>()?
    };

    let mut values = vec![Vec::new(); steps + 1];
    let mut psis = obstacle.then(|| vec![Vec::new(); steps + 1]);
    let terminal: Vec<f64> = terminal_values(&s, spec, t_end);
    if let Some(p) = psis.as_mut() {
        p[steps] = obstacle_values(&s, spec, t_end)?;
    }
    let mut u = terminal;
    let mut f_hi = load(&s, spec, t_end);
    let mut residual: f64 = 0.0;
    let mut comp_max: f64 = 0.0;
    let mut iters = 0;
    let mut au = vec![0.0; n];
    for step in (0..steps).rev() {
        let t_lo = times[step];
        let t_hi = times[step + 1];
        let implicit_start = steps - 1 - step < cfg.rannacher_steps;
        let sub: Vec<(f64, f64)> = if implicit_start {
            vec![(t_hi - 0.5 * dt, t_hi), (t_lo, t_hi - 0.5 * dt)]
        } else {
            vec![(t_lo, t_hi)]
        };
        for (lo, hi) in sub {
            let which = usize::from(implicit_start);
            let (th, h) = schemes[which];
            let f_lo = load(&s, spec, lo);
            let f_top = if (hi - t_hi).abs() < 1e-15 { f_hi.clone() } else { load(&s, spec, hi) };
            a.mul(&u, &mut au);
            let mut rhs = vec![0.0; n];
            for i in 0..n {
                rhs[i] = if free[i] {
                    u[i] - (1.0 - th) * h * au[i] + h * (th * f_lo[i] + (1.0 - th) * f_top[i])
                } else {
                    f_lo[i]
                };
            }
            let m = &mats[which];
            let next = if obstacle {
                let psi = obstacle_values(&s, spec, lo)?;
                let (v, it, comp) = lcp(m, &rhs, &psi, &free, Some(&u), cfg)?;
                iters += it;
                comp_max = comp_max.max(comp);
                if (lo - t_lo).abs() < 1e-15 {
                    psis.as_mut().unwrap()[step] = psi;
                }
                v
            } else {
                let v = lus[which].as_ref().unwrap().solve(&rhs);
                residual = residual.max(rel_residual(m, &v, &rhs));
                v
            };
            check_finite(&next)?;
            u = next;
        }
        f_hi = load(&s, spec, t_lo);
        values[step] = u.clone();
    }
    values[steps] = terminal_values(&s, spec, t_end);
    let active = psis.as_ref().map(|p| active_set(&values[0], &p[0], &free));
    Ok(PdeSolution {
        upwinded_rows: s.op.upwinded,
        grid: s.grid,
        times,
        values,
        residual: if obstacle { comp_max } else { residual },
        complementarity: obstacle.then_some(comp_max),
        active,
        psi: psis,
        iterations: iters.max(steps),
        scenario: s.scenario,
    })
}

/// Obstacle problem of either kind.
pub fn solve_obstacle(model: &DiffusionModel, domain: &DomainSpec, spec: &ProblemSpec, cfg: &OracleConfig) -> Result<PdeSolution> {
    if !spec.kind.is_obstacle() {
        return Err(Error::MissingField("psi".into()));
    }
    if spec.kind.is_parabolic() {
        solve_parabolic(model, domain, spec, cfg)
    } else {
        solve_elliptic_obstacle(model, domain, spec, cfg)
    }
}

/// Dispatch on the problem kind.
pub fn solve(model: &DiffusionModel, domain: &DomainSpec, spec: &ProblemSpec, cfg: &OracleConfig) -> Result<PdeSolution> {
    use crate::problem::ProblemKind::*;
    match spec.kind {
        EllipticBvp => solve_elliptic(model, domain, spec, cfg),
        ParabolicBvp | ParabolicObstacle => solve_parabolic(model, domain, spec, cfg),
        EllipticObstacle => solve_elliptic_obstacle(model, domain, spec, cfg),
    }
}
