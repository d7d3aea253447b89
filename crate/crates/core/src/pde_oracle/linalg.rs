//! Sparse rows, a banded LU for the grid sizes used here, BiCGSTAB for the
//! rest, and projected SOR for complementarity problems.

use crate::error::{Error, Result};

/// Square sparse matrix stored by rows, diagonal kept separately.
#[derive(Clone, Debug)]
pub struct SparseRows {
    pub diag: Vec<f64>,
    pub off: Vec<Vec<(usize, f64)>>,
}

impl SparseRows {
    pub fn n(&self) -> usize {
        self.diag.len()
    }

    pub fn mul(&self, u: &[f64], out: &mut [f64]) {
        for i in 0..self.n() {
            let mut s = self.diag[i] * u[i];
            for &(j, v) in &self.off[i] {
                s += v * u[j];
            }
            out[i] = s;
        }
    }

    pub fn row_dot(&self, i: usize, u: &[f64]) -> f64 {
        let mut s = self.diag[i] * u[i];
        for &(j, v) in &self.off[i] {
            s += v * u[j];
        }
        s
    }

    pub fn bandwidth(&self) -> usize {
        self.off
            .iter()
            .enumerate()
            .flat_map(|(i, r)| r.iter().map(move |(j, _)| i.abs_diff(*j)))
            .max()
            .unwrap_or(0)
    }

    /// `alpha I + beta A` restricted to the rows in `scaled`; other rows are
    /// copied unchanged.
    pub fn shifted(&self, alpha: f64, beta: f64, scaled: &[bool]) -> SparseRows {
        let mut m = self.clone();
        for i in 0..self.n() {
            if scaled[i] {
                m.diag[i] = alpha + beta * self.diag[i];
                for e in m.off[i].iter_mut() {
                    e.1 *= beta;
                }
            }
        }
        m
    }
}

/// Banded LU without pivoting (the matrices are M-matrices).
pub struct BandedLu {
    n: usize,
    bw: usize,
    // row i holds columns i-bw ..= i+bw
    band: Vec<f64>,
}

impl BandedLu {
    pub fn factor(a: &SparseRows) -> Result<Self> {
        let n = a.n();
        let bw = a.bandwidth();
        let w = 2 * bw + 1;
        let mut band = vec![0.0; n * w];
        for i in 0..n {
            band[i * w + bw] = a.diag[i];
            for &(j, v) in &a.off[i] {
                band[i * w + (j + bw - i)] += v;
            }
        }
        for k in 0..n {
            let piv = band[k * w + bw];
            if !(piv.abs() > 0.0) || !piv.is_finite() {
                return Err(Error::SolverDiverged(format!("zero pivot at row {k}")));
            }
            let iend = (k + bw).min(n - 1);
            for i in k + 1..=iend {
                let ik = i * w + (k + bw - i);
                let l = band[ik] / piv;
                if l == 0.0 {
                    continue;
                }
                band[ik] = l;
                let jend = (k + bw).min(n - 1);
                for j in k + 1..=jend {
                    band[i * w + (j + bw - i)] -= l * band[k * w + (j + bw - k)];
                }
            }
        }
        Ok(BandedLu { n, bw, band })
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let (n, bw, w) = (self.n, self.bw, 2 * self.bw + 1);
        let mut y = rhs.to_vec();
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            let mut s = y[i];
            for j in j0..i {
                s -= self.band[i * w + (j + bw - i)] * y[j];
            }
            y[i] = s;
        }
        for i in (0..n).rev() {
            let jend = (i + bw).min(n - 1);
            let mut s = y[i];
            for j in i + 1..=jend {
                s -= self.band[i * w + (j + bw - i)] * y[j];
            }
            y[i] = s / self.band[i * w + bw];
        }
        y
    }
}

/// Jacobi-preconditioned BiCGSTAB. Returns the solution and iteration count.
pub fn bicgstab(a: &SparseRows, b: &[f64], x0: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, usize)> {
    let n = a.n();
    let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(p, q)| p * q).sum::<f64>();
    let pre = |v: &[f64]| -> Vec<f64> { v.iter().zip(&a.diag).map(|(x, d)| x / d).collect() };
    let mut x = x0.to_vec();
    let mut r = vec![0.0; n];
    a.mul(&x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let bnorm = dot(b, b).sqrt().max(1e-300);
    let r0 = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut t = vec![0.0; n];
    for it in 0..max_iter {
        if dot(&r, &r).sqrt() <= tol * bnorm {
            return Ok((x, it));
        }
        let rho1 = dot(&r0, &r);
        if rho1 == 0.0 || !rho1.is_finite() {
            return Err(Error::SolverDiverged("BiCGSTAB breakdown".into()));
        }
        let beta = (rho1 / rho) * (alpha / omega);
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        let ph = pre(&p);
        a.mul(&ph, &mut v);
        alpha = rho1 / dot(&r0, &v);
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        let sh = pre(&s);
        a.mul(&sh, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * ph[i] + omega * sh[i];
            r[i] = s[i] - omega * t[i];
        }
        rho = rho1;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::SolverDiverged("non-finite iterate".into()));
        }
    }
    let res = dot(&r, &r).sqrt() / bnorm;
    Err(Error::MaxIterations { limit: max_iter, residual: res })
}

/// Direct solve when the band is small enough, BiCGSTAB otherwise.
pub fn solve_linear(a: &SparseRows, b: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let bw = a.bandwidth();
    if (a.n() as f64) * (bw as f64).powi(2) <= 2e8 {
        Ok(BandedLu::factor(a)?.solve(b))
    } else {
        Ok(bicgstab(a, b, b, tol, max_iter)?.0)
    }
}

/// Scaled complementarity residual `max_i |min((A u - b)_i / A_ii, u_i - psi_i)|`
/// over the rows in `free`.
pub fn complementarity(a: &SparseRows, u: &[f64], b: &[f64], psi: &[f64], free: &[bool]) -> f64 {
    (0..a.n())
        .filter(|i| free[*i])
        .map(|i| ((a.row_dot(i, u) - b[i]) / a.diag[i]).min(u[i] - psi[i]).abs())
        .fold(0.0, f64::max)
}

/// Projected SOR for `min(A u - b, u - psi) = 0` on the rows in `free`;
/// other rows are solved exactly (they are identity rows). Iterates until
/// the largest update is below `tol`.
pub fn psor(a: &SparseRows, b: &[f64], psi: &[f64], free: &[bool], u: &mut [f64], omega: f64, tol: f64, max_iter: usize) -> Result<usize> {
    let n = a.n();
    for it in 1..=max_iter {
        let mut delta: f64 = 0.0;
        for i in 0..n {
            let mut s = b[i];
            for &(j, v) in &a.off[i] {
                s -= v * u[j];
            }
            let gs = s / a.diag[i];
            let new = if free[i] {
                (u[i] + omega * (gs - u[i])).max(psi[i])
            } else {
                gs
            };
            delta = delta.max((new - u[i]).abs());
            u[i] = new;
        }
        if !delta.is_finite() {
            return Err(Error::SolverDiverged("PSOR produced non-finite values".into()));
        }
        if delta <= tol {
            return Ok(it);
        }
    }
    Err(Error::MaxIterations {
        limit: max_iter,
        residual: complementarity(a, u, b, psi, free),
    })
}

/// Policy iteration for the same complementarity problem: solve with the
/// current active set pinned to `psi`, then re-pick the active set. Finite
/// for M-matrices; used as a warm start for [`psor`].
pub fn policy_iteration(a: &SparseRows, b: &[f64], psi: &[f64], free: &[bool], u: &mut [f64], max_iter: usize) -> Result<usize> {
    let n = a.n();
    let mut active: Vec<bool> = (0..n).map(|i| free[i] && u[i] <= psi[i]).collect();
    for it in 1..=max_iter {
        let mut m = a.clone();
        let mut rhs = b.to_vec();
        for i in 0..n {
            if active[i] {
                m.diag[i] = 1.0;
                m.off[i].clear();
                rhs[i] = psi[i];
            }
        }
        let sol = solve_linear(&m, &rhs, 1e-13, 100_000)?;
        u.copy_from_slice(&sol);
        let next: Vec<bool> = (0..n)
            .map(|i| free[i] && (a.row_dot(i, u) - b[i]) / a.diag[i] > u[i] - psi[i])
            .collect();
        if next == active {
            return Ok(it);
        }
        active = next;
    }
    Ok(max_iter)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplace(n: usize) -> SparseRows {
        let mut off = vec![vec![]; n];
        for (i, row) in off.iter_mut().enumerate() {
            if i > 0 {
                row.push((i - 1, -1.0));
            }
            if i + 1 < n {
                row.push((i + 1, -1.0));
            }
        }
        SparseRows {
            diag: vec![2.1; n],
            off,
        }
    }

    #[test]
    fn lu_and_bicgstab_agree() {
        let a = laplace(50);
        let b: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let x1 = BandedLu::factor(&a).unwrap().solve(&b);
        let (x2, _) = bicgstab(&a, &b, &vec![0.0; 50], 1e-13, 1000).unwrap();
        let mut r = vec![0.0; 50];
        a.mul(&x1, &mut r);
        for i in 0..50 {
            assert!((r[i] - b[i]).abs() < 1e-12);
            assert!((x1[i] - x2[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn psor_matches_policy_iteration() {
        let a = laplace(40);
        let b = vec![0.01; 40];
        let psi: Vec<f64> = (0..40).map(|i| 0.5 - (i as f64 - 20.0).abs() / 20.0).collect();
        let free = vec![true; 40];
        let mut u1 = psi.clone();
        psor(&a, &b, &psi, &free, &mut u1, 1.5, 1e-13, 100_000).unwrap();
        let mut u2 = psi.clone();
        policy_iteration(&a, &b, &psi, &free, &mut u2, 100).unwrap();
        for i in 0..40 {
            assert!((u1[i] - u2[i]).abs() < 1e-10);
        }
        assert!(complementarity(&a, &u2, &b, &psi, &free) < 1e-12);
    }
}
