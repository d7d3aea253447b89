//! Box domains `O` in the half-space, with the degenerate face `x_d = 0`
//! split off as `Gamma0` and every other finite face collected in `Gamma1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    /// Lower bounds; `lower[d-1]` must be 0. `None` means unbounded.
    pub lower: Vec<Option<f64>>,
    pub upper: Vec<Option<f64>>,
}

/// Where a path left the domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Face {
    Gamma0,
    Gamma1 { axis: usize, upper: bool },
    /// Still inside when the simulation horizon was reached.
    Horizon,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Location {
    Interior,
    Gamma0,
    Gamma1 { axis: usize, upper: bool },
    Outside,
}

impl DomainSpec {
    pub fn new(lower: Vec<Option<f64>>, upper: Vec<Option<f64>>) -> Result<Self> {
        let d = lower.len();
        if d == 0 || upper.len() != d {
            return Err(Error::InvalidDomain("lower and upper must have equal, nonzero length".into()));
        }
        if lower[d - 1] != Some(0.0) {
            return Err(Error::InvalidDomain("lower bound of x_d must be 0".into()));
        }
        for i in 0..d {
            if let (Some(a), Some(b)) = (lower[i], upper[i]) {
                if !(a < b) {
                    return Err(Error::InvalidDomain(format!("empty range on axis {i}")));
                }
            }
            if lower[i].is_some_and(|v| !v.is_finite()) || upper[i].is_some_and(|v| !v.is_finite()) {
                return Err(Error::InvalidDomain(format!("non-finite bound on axis {i}")));
            }
        }
        Ok(DomainSpec { lower, upper })
    }

    /// The whole half-space.
    pub fn half_space(d: usize) -> Self {
        let mut lower = vec![None; d];
        lower[d - 1] = Some(0.0);
        DomainSpec {
            lower,
            upper: vec![None; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn is_bounded(&self) -> bool {
        self.lower.iter().chain(&self.upper).all(Option::is_some)
    }

    /// Largest norm of a point in the closure, if bounded.
    pub fn radius(&self) -> Option<f64> {
        if !self.is_bounded() {
            return None;
        }
        let s: f64 = self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(a, b)| {
                let m = a.unwrap().abs().max(b.unwrap().abs());
                m * m
            })
            .sum();
        Some(s.sqrt())
    }

    /// Gamma0 is the relative interior of the face `x_d = 0`; for a box with
    /// nonempty ranges it is never empty.
    pub fn gamma0_nonempty(&self) -> bool {
        true
    }

    pub fn locate(&self, x: &[f64], tol: f64) -> Location {
        let d = self.dim();
        let last = d - 1;
        for i in 0..d {
            if let Some(a) = self.lower[i] {
                if x[i] < a - if i == last { tol } else { 0.0 } {
                    return Location::Outside;
                }
            }
            if let Some(b) = self.upper[i] {
                if x[i] > b {
                    return Location::Outside;
                }
            }
        }
        for i in 0..d {
            if i != last && self.lower[i] == Some(x[i]) {
                return Location::Gamma1 { axis: i, upper: false };
            }
            if self.upper[i] == Some(x[i]) {
                return Location::Gamma1 { axis: i, upper: true };
            }
        }
        if x[last] <= tol {
            Location::Gamma0
        } else {
            Location::Interior
        }
    }

    /// First crossing of a `Gamma1` face along the segment `a -> b`, as
    /// `(fraction, face)`. The degenerate face is not considered.
    pub fn gamma1_crossing(&self, a: &[f64], b: &[f64]) -> Option<(f64, Face)> {
        let last = self.dim() - 1;
        let mut best: Option<(f64, Face)> = None;
        let mut offer = |frac: f64, face: Face| {
            if best.is_none_or(|(f, _)| frac < f) {
                best = Some((frac, face));
            }
        };
        for i in 0..self.dim() {
            if let Some(u) = self.upper[i] {
                if b[i] >= u && a[i] < u {
                    offer(((u - a[i]) / (b[i] - a[i])).clamp(0.0, 1.0), Face::Gamma1 { axis: i, upper: true });
                }
            }
            if i != last {
                if let Some(l) = self.lower[i] {
                    if b[i] <= l && a[i] > l {
                        offer(((a[i] - l) / (a[i] - b[i])).clamp(0.0, 1.0), Face::Gamma1 { axis: i, upper: false });
                    }
                }
            }
        }
        best
    }

    /// Snap a point onto the given face.
    pub fn project(&self, x: &mut [f64], face: Face) {
        match face {
            Face::Gamma0 => x[self.dim() - 1] = 0.0,
            Face::Gamma1 { axis, upper } => {
                x[axis] = if upper { self.upper[axis] } else { self.lower[axis] }.unwrap_or(x[axis]);
            }
            Face::Horizon => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crossing_picks_first_face() {
        let dom = DomainSpec::new(vec![Some(-1.0), Some(0.0)], vec![Some(1.0), Some(1.0)]).unwrap();
        let (f, face) = dom.gamma1_crossing(&[0.5, 0.5], &[1.5, 2.5]).unwrap();
        assert_eq!(face, Face::Gamma1 { axis: 1, upper: true });
        assert!((f - 0.25).abs() < 1e-15);
        assert!(dom.gamma1_crossing(&[0.5, 0.5], &[0.6, -0.5]).is_none());
    }

    #[test]
    fn locate_faces() {
        let dom = DomainSpec::new(vec![Some(-1.0), Some(0.0)], vec![Some(1.0), None]).unwrap();
        assert_eq!(dom.locate(&[0.0, 0.0], 1e-10), Location::Gamma0);
        assert_eq!(dom.locate(&[1.0, 0.5], 1e-10), Location::Gamma1 { axis: 0, upper: true });
        assert_eq!(dom.locate(&[0.0, 3.0], 1e-10), Location::Interior);
        assert_eq!(dom.locate(&[2.0, 3.0], 1e-10), Location::Outside);
    }

    #[test]
    fn rejects_bad_boxes() {
        assert!(DomainSpec::new(vec![Some(1.0)], vec![Some(2.0)]).is_err());
        assert!(DomainSpec::new(vec![Some(0.0), Some(0.0)], vec![Some(0.0), None]).is_err());
    }
}
