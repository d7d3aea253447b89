//! A small closed catalog of coefficient expressions.
//!
//! Expressions are serializable, evaluate without allocation, and carry
//! exact first and second derivatives through [`Jet`]. The derivatives are
//! what make manufactured right-hand sides (`f = A u`) possible without
//! finite differencing.

use serde::{Deserialize, Serialize};
use smallvec::{smallvec, SmallVec};

/// Gradient storage, inline up to four dimensions.
pub type Grad = SmallVec<[f64; 4]>;
/// Row-major Hessian storage, inline up to four dimensions.
pub type Hess = SmallVec<[f64; 16]>;

/// Coefficient expression in `(t, x)`. Axes are 0-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Expr {
    Const {
        value: f64,
    },
    /// `offset + sum_i coeffs[i] * x_i`; missing coefficients are zero.
    Affine {
        offset: f64,
        coeffs: Vec<f64>,
    },
    /// `scale * x_axis^exponent`. Integer exponents keep the sign of `x`;
    /// fractional ones act on the positive part.
    Power {
        axis: usize,
        scale: f64,
        exponent: f64,
    },
    Time,
    Sum {
        terms: Vec<Expr>,
    },
    Product {
        factors: Vec<Expr>,
    },
    Exp {
        arg: Box<Expr>,
    },
    PositivePart {
        arg: Box<Expr>,
    },
}

/// Value with gradient, Hessian (row-major, `dim x dim`) and time derivative.
#[derive(Clone, Debug, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub grad: Grad,
    pub hess: Hess,
    pub dt: f64,
}

impl Jet {
    fn constant(dim: usize, value: f64) -> Self {
        Jet {
            value,
            grad: smallvec![0.0; dim],
            hess: smallvec![0.0; dim * dim],
            dt: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.grad.len()
    }

    pub fn hess_at(&self, i: usize, j: usize) -> f64 {
        self.hess[i * self.dim() + j]
    }
}

fn is_integer(p: f64) -> bool {
    p.fract() == 0.0 && p.abs() < 64.0
}

fn power_value(x: f64, p: f64) -> f64 {
    if p == 0.0 {
        1.0
    } else if is_integer(p) {
        x.powi(p as i32)
    } else if x > 0.0 {
        x.powf(p)
    } else {
        0.0
    }
}

impl Expr {
    pub fn constant(value: f64) -> Self {
        Expr::Const { value }
    }

    pub fn coord(axis: usize) -> Self {
        Expr::Power {
            axis,
            scale: 1.0,
            exponent: 1.0,
        }
    }

    pub fn affine(offset: f64, coeffs: Vec<f64>) -> Self {
        Expr::Affine { offset, coeffs }
    }

    pub fn power(axis: usize, scale: f64, exponent: f64) -> Self {
        Expr::Power {
            axis,
            scale,
            exponent,
        }
    }

    pub fn sum(terms: Vec<Expr>) -> Self {
        Expr::Sum { terms }
    }

    pub fn product(factors: Vec<Expr>) -> Self {
        Expr::Product { factors }
    }

    pub fn exp(arg: Expr) -> Self {
        Expr::Exp { arg: Box::new(arg) }
    }

    pub fn positive_part(arg: Expr) -> Self {
        Expr::PositivePart { arg: Box::new(arg) }
    }

    pub fn eval(&self, t: f64, x: &[f64]) -> f64 {
        self.eval_with(t, &|i| x.get(i).copied().unwrap_or(0.0))
    }

    /// Evaluate with every coordinate except `axis` set to zero, at `t = 0`.
    pub fn eval_axis(&self, axis: usize, y: f64) -> f64 {
        self.eval_with(0.0, &|i| if i == axis { y } else { 0.0 })
    }

    fn eval_with(&self, t: f64, x: &dyn Fn(usize) -> f64) -> f64 {
        match self {
            Expr::Const { value } => *value,
            Expr::Affine { offset, coeffs } => {
                let mut s = *offset;
                for (i, c) in coeffs.iter().enumerate() {
                    if *c != 0.0 {
                        s += c * x(i);
                    }
                }
                s
            }
            Expr::Power {
                axis,
                scale,
                exponent,
            } => scale * power_value(x(*axis), *exponent),
            Expr::Time => t,
            Expr::Sum { terms } => terms.iter().map(|e| e.eval_with(t, x)).sum(),
            Expr::Product { factors } => factors.iter().map(|e| e.eval_with(t, x)).product(),
            Expr::Exp { arg } => arg.eval_with(t, x).exp(),
            Expr::PositivePart { arg } => arg.eval_with(t, x).max(0.0),
        }
    }

    /// Value and exact derivatives at `(t, x)`.
    pub fn jet(&self, t: f64, x: &[f64]) -> Jet {
        let d = x.len();
        match self {
            Expr::Const { value } => Jet::constant(d, *value),
            Expr::Affine { offset, coeffs } => {
                let mut j = Jet::constant(d, *offset);
                for (i, c) in coeffs.iter().enumerate().take(d) {
                    j.value += c * x[i];
                    j.grad[i] = *c;
                }
                j
            }
            Expr::Power {
                axis,
                scale,
                exponent,
            } => {
                let mut j = Jet::constant(d, 0.0);
                if *axis >= d {
                    return j;
                }
                let y = x[*axis];
                let p = *exponent;
                j.value = scale * power_value(y, p);
                if p != 0.0 && (is_integer(p) || y > 0.0) {
                    j.grad[*axis] = scale * p * power_value(y, p - 1.0);
                    if p != 1.0 {
                        j.hess[axis * d + axis] = scale * p * (p - 1.0) * power_value(y, p - 2.0);
                    }
                }
                j
            }
            Expr::Time => {
                let mut j = Jet::constant(d, t);
                j.dt = 1.0;
                j
            }
            Expr::Sum { terms } => {
                let mut acc = Jet::constant(d, 0.0);
                for e in terms {
                    let j = e.jet(t, x);
                    acc.value += j.value;
                    acc.dt += j.dt;
                    for (a, b) in acc.grad.iter_mut().zip(&j.grad) {
                        *a += b;
                    }
                    for (a, b) in acc.hess.iter_mut().zip(&j.hess) {
                        *a += b;
                    }
                }
                acc
            }
            Expr::Product { factors } => {
                let mut acc = Jet::constant(d, 1.0);
                for e in factors {
                    let g = e.jet(t, x);
                    let mut out = Jet::constant(d, acc.value * g.value);
                    out.dt = acc.dt * g.value + acc.value * g.dt;
                    for i in 0..d {
                        out.grad[i] = acc.grad[i] * g.value + acc.value * g.grad[i];
                        for k in 0..d {
                            out.hess[i * d + k] = acc.hess[i * d + k] * g.value
                                + acc.grad[i] * g.grad[k]
                                + g.grad[i] * acc.grad[k]
                                + acc.value * g.hess[i * d + k];
                        }
                    }
                    acc = out;
                }
                acc
            }
            Expr::Exp { arg } => {
                let a = arg.jet(t, x);
                let v = a.value.exp();
                let mut out = Jet::constant(d, v);
                out.dt = v * a.dt;
                for i in 0..d {
                    out.grad[i] = v * a.grad[i];
                    for k in 0..d {
                        out.hess[i * d + k] = v * (a.hess[i * d + k] + a.grad[i] * a.grad[k]);
                    }
                }
                out
            }
            Expr::PositivePart { arg } => {
                let a = arg.jet(t, x);
                if a.value > 0.0 {
                    a
                } else {
                    Jet::constant(d, 0.0)
                }
            }
        }
    }

    /// True if the expression reads coordinate `axis`.
    pub fn uses_axis(&self, axis: usize) -> bool {
        match self {
            Expr::Const { .. } | Expr::Time => false,
            Expr::Affine { coeffs, .. } => coeffs.get(axis).is_some_and(|c| *c != 0.0),
            Expr::Power { axis: a, .. } => *a == axis,
            Expr::Sum { terms } => terms.iter().any(|e| e.uses_axis(axis)),
            Expr::Product { factors } => factors.iter().any(|e| e.uses_axis(axis)),
            Expr::Exp { arg } | Expr::PositivePart { arg } => arg.uses_axis(axis),
        }
    }

    pub fn uses_time(&self) -> bool {
        match self {
            Expr::Time => true,
            Expr::Const { .. } | Expr::Affine { .. } | Expr::Power { .. } => false,
            Expr::Sum { terms } => terms.iter().any(Expr::uses_time),
            Expr::Product { factors } => factors.iter().any(Expr::uses_time),
            Expr::Exp { arg } | Expr::PositivePart { arg } => arg.uses_time(),
        }
    }

    /// Largest axis index referenced, if any.
    pub fn max_axis(&self) -> Option<usize> {
        match self {
            Expr::Const { .. } | Expr::Time => None,
            Expr::Affine { coeffs, .. } => coeffs.iter().rposition(|c| *c != 0.0),
            Expr::Power { axis, .. } => Some(*axis),
            Expr::Sum { terms: v } | Expr::Product { factors: v } => {
                v.iter().filter_map(Expr::max_axis).max()
            }
            Expr::Exp { arg } | Expr::PositivePart { arg } => arg.max_axis(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(e: &Expr, x: &[f64]) {
        let j = e.jet(0.3, x);
        let h = 1e-5;
        let d = x.len();
        for i in 0..d {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += h;
            xm[i] -= h;
            let g = (e.eval(0.3, &xp) - e.eval(0.3, &xm)) / (2.0 * h);
            assert!((g - j.grad[i]).abs() < 1e-6 * (1.0 + g.abs()), "grad {i}: {g} vs {}", j.grad[i]);
            for k in 0..d {
                let jp = e.jet(0.3, &xp);
                let jm = e.jet(0.3, &xm);
                let hk = (jp.grad[k] - jm.grad[k]) / (2.0 * h);
                assert!((hk - j.hess_at(i, k)).abs() < 1e-5 * (1.0 + hk.abs()));
            }
        }
        let dt = (e.eval(0.3 + h, x) - e.eval(0.3 - h, x)) / (2.0 * h);
        assert!((dt - j.dt).abs() < 1e-6 * (1.0 + dt.abs()));
    }

    #[test]
    fn jets_match_finite_differences() {
        let e = Expr::sum(vec![
            Expr::product(vec![Expr::coord(0), Expr::power(1, 2.0, 2.0)]),
            Expr::exp(Expr::affine(0.1, vec![0.5, -0.25])),
            Expr::power(1, 1.5, 0.5),
            Expr::product(vec![Expr::Time, Expr::coord(1)]),
        ]);
        fd_check(&e, &[0.7, 1.3]);
        fd_check(&e, &[-1.1, 0.4]);
    }

    #[test]
    fn power_semantics() {
        assert_eq!(Expr::power(0, 1.0, 2.0).eval(0.0, &[-3.0]), 9.0);
        assert_eq!(Expr::power(0, 1.0, 0.5).eval(0.0, &[-4.0]), 0.0);
        assert_eq!(Expr::power(0, 2.0, 0.5).eval(0.0, &[4.0]), 4.0);
    }

    #[test]
    fn structure_queries() {
        let e = Expr::sum(vec![Expr::affine(1.0, vec![0.0, 2.0]), Expr::Time]);
        assert!(e.uses_axis(1));
        assert!(!e.uses_axis(0));
        assert!(e.uses_time());
        assert_eq!(e.max_axis(), Some(1));
        assert_eq!(e.eval_axis(1, 3.0), 7.0);
    }

    #[test]
    fn serde_round_trip() {
        let e = Expr::positive_part(Expr::affine(1.0, vec![-1.0]));
        let s = serde_json::to_string(&e).unwrap();
        assert!(s.contains("\"kind\":\"positive_part\""));
        let back: Expr = serde_json::from_str(&s).unwrap();
        assert_eq!(back, e);
    }
}
