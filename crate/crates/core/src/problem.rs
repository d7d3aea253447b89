//! Problem data: right-hand side `f`, boundary data `g`, optional obstacle
//! `psi`, and which boundary portion carries the data.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::boundary::Scenario;
use crate::domain::DomainSpec;
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::model::{generator_of_jet, DiffusionModel};

/// Where a field is defined. Only relevant for boundary data: `Gamma1Only`
/// data cannot be evaluated at an exit through `x_d = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Support {
    #[default]
    Everywhere,
    Gamma1Only,
}

#[derive(Clone)]
pub enum FieldSource {
    Expr(Expr),
    /// `A u` (elliptic) or `-u_t + A u` (parabolic) for a smooth `u`.
    Generator {
        u: Expr,
        parabolic: bool,
        model: Arc<DiffusionModel>,
    },
    Custom(Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>),
}

#[derive(Clone)]
pub struct ScalarField {
    pub source: FieldSource,
    /// `|field(t, x)| <= growth_k (1 + |x|)`.
    pub growth_k: f64,
    pub support: Support,
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let src = match &self.source {
            FieldSource::Expr(e) => format!("{e:?}"),
            FieldSource::Generator { u, parabolic, .. } => format!("generator(u = {u:?}, parabolic = {parabolic})"),
            FieldSource::Custom(_) => "custom".to_string(),
        };
        f.debug_struct("ScalarField")
            .field("source", &src)
            .field("growth_k", &self.growth_k)
            .field("support", &self.support)
            .finish()
    }
}

impl ScalarField {
    pub fn expr(e: Expr, growth_k: f64) -> Self {
        ScalarField {
            source: FieldSource::Expr(e),
            growth_k,
            support: Support::Everywhere,
        }
    }

    pub fn zero() -> Self {
        Self::expr(Expr::constant(0.0), 0.0)
    }

    pub fn manufactured(model: &DiffusionModel, u: Expr, parabolic: bool, growth_k: f64) -> Self {
        ScalarField {
            source: FieldSource::Generator {
                u,
                parabolic,
                model: Arc::new(model.clone()),
            },
            growth_k,
            support: Support::Everywhere,
        }
    }

    pub fn custom<F: Fn(f64, &[f64]) -> f64 + Send + Sync + 'static>(f: F, growth_k: f64) -> Self {
        ScalarField {
            source: FieldSource::Custom(Arc::new(f)),
            growth_k,
            support: Support::Everywhere,
        }
    }

    pub fn with_support(mut self, support: Support) -> Self {
        self.support = support;
        self
    }

    pub fn eval(&self, t: f64, x: &[f64]) -> f64 {
        match &self.source {
            FieldSource::Expr(e) => e.eval(t, x),
            FieldSource::Generator { u, parabolic, model } => {
                let j = u.jet(t, x);
                let a = generator_of_jet(model, x, &j);
                if *parabolic {
                    a - j.dt
                } else {
                    a
                }
            }
            FieldSource::Custom(f) => f(t, x),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    EllipticBvp,
    ParabolicBvp,
    EllipticObstacle,
    ParabolicObstacle,
}

impl ProblemKind {
    pub fn is_parabolic(self) -> bool {
        matches!(self, ProblemKind::ParabolicBvp | ProblemKind::ParabolicObstacle)
    }

    pub fn is_obstacle(self) -> bool {
        matches!(self, ProblemKind::EllipticObstacle | ProblemKind::ParabolicObstacle)
    }
}

/// Which exit time the representation uses: first exit from `O` (`Tau`) or
/// first exit through `Gamma1` only (`Lambda`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Tau,
    Lambda,
}

/// Where boundary data is prescribed: `Gamma1` only, or all of the boundary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryMode {
    Partial,
    Full,
}

#[derive(Clone, Debug)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub variant: Variant,
    pub f: ScalarField,
    pub g: ScalarField,
    pub psi: Option<ScalarField>,
    /// Terminal time `T` of parabolic problems.
    pub horizon: Option<f64>,
    /// Terminal data at `T` when it differs from `g`.
    pub terminal: Option<ScalarField>,
    pub scenario: Option<Scenario>,
}

impl ProblemSpec {
    pub fn elliptic(f: ScalarField, g: ScalarField) -> Self {
        ProblemSpec {
            kind: ProblemKind::EllipticBvp,
            variant: Variant::Tau,
            f,
            g,
            psi: None,
            horizon: None,
            terminal: None,
            scenario: None,
        }
    }

    pub fn parabolic(f: ScalarField, g: ScalarField, horizon: f64) -> Self {
        ProblemSpec {
            kind: ProblemKind::ParabolicBvp,
            horizon: Some(horizon),
            ..Self::elliptic(f, g)
        }
    }

    pub fn with_obstacle(mut self, psi: ScalarField) -> Self {
        self.kind = if self.kind.is_parabolic() {
            ProblemKind::ParabolicObstacle
        } else {
            ProblemKind::EllipticObstacle
        };
        self.psi = Some(psi);
        self
    }

    pub fn with_terminal(mut self, h: ScalarField) -> Self {
        self.terminal = Some(h);
        self
    }

    /// Data paid at the terminal time.
    pub fn terminal_data(&self) -> &ScalarField {
        self.terminal.as_ref().unwrap_or(&self.g)
    }

    pub fn with_variant(mut self, v: Variant) -> Self {
        self.variant = v;
        self
    }

    pub fn with_scenario(mut self, s: Scenario) -> Self {
        self.scenario = Some(s);
        self
    }

    /// Data on `Gamma1` only in scenario A and for the lambda variant;
    /// everywhere on the boundary otherwise.
    pub fn boundary_mode(&self) -> BoundaryMode {
        match (self.variant, self.scenario) {
            (Variant::Lambda, _) | (Variant::Tau, Some(Scenario::A)) => BoundaryMode::Partial,
            _ => BoundaryMode::Full,
        }
    }

    pub fn terminal_time(&self) -> Result<f64> {
        match self.horizon {
            Some(t) if t > 0.0 && t.is_finite() => Ok(t),
            _ => Err(Error::MissingField("horizon".into())),
        }
    }

    /// Field presence, horizon, and `psi <= g` on the data-carrying boundary
    /// (and on the terminal slice for parabolic problems).
    pub fn check(&self, domain: &DomainSpec) -> Result<()> {
        if self.kind.is_obstacle() && self.psi.is_none() {
            return Err(Error::MissingField("psi".into()));
        }
        let t_end = if self.kind.is_parabolic() {
            Some(self.terminal_time()?)
        } else {
            None
        };
        let Some(psi) = &self.psi else {
            return Ok(());
        };
        let full = self.boundary_mode() == BoundaryMode::Full;
        let mut pts = boundary_samples(domain, full);
        let times: Vec<f64> = match t_end {
            Some(t) => (0..=4).map(|k| t * k as f64 / 4.0).collect(),
            None => vec![0.0],
        };
        for t in &times {
            for x in &pts {
                let (p, g) = (psi.eval(*t, x), self.g.eval(*t, x));
                if p > g + 1e-12 * (1.0 + g.abs()) {
                    return Err(Error::Compatibility(format!(
                        "psi = {p} exceeds g = {g} at t = {t}, x = {x:?} on the boundary"
                    )));
                }
            }
        }
        if let Some(t) = t_end {
            pts = interior_samples(domain);
            for x in &pts {
                let (p, g) = (psi.eval(t, x), self.terminal_data().eval(t, x));
                if p > g + 1e-12 * (1.0 + g.abs()) {
                    return Err(Error::Compatibility(format!(
                        "psi = {p} exceeds the terminal data {g} at the terminal time, x = {x:?}"
                    )));
                }
            }
        }
        Ok(())
    }
}

const SAMPLE_REACH: f64 = 4.0;

fn axis_samples(domain: &DomainSpec, i: usize) -> Vec<f64> {
    let lo = domain.lower[i].unwrap_or(-SAMPLE_REACH);
    let hi = domain.upper[i].unwrap_or(lo.max(0.0) + SAMPLE_REACH);
    (0..=8).map(|k| lo + (hi - lo) * k as f64 / 8.0).collect()
}

fn tensor(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = vec![vec![]];
    for a in axes {
        out = out
            .into_iter()
            .flat_map(|p| {
                a.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push(*v);
                    q
                })
            })
            .collect();
    }
    out
}

fn interior_samples(domain: &DomainSpec) -> Vec<Vec<f64>> {
    let axes: Vec<Vec<f64>> = (0..domain.dim()).map(|i| axis_samples(domain, i)).collect();
    tensor(&axes)
}

/// Points on the finite faces of the box; `x_d = 0` only when `with_gamma0`.
fn boundary_samples(domain: &DomainSpec, with_gamma0: bool) -> Vec<Vec<f64>> {
    let d = domain.dim();
    let mut pts = Vec::new();
    for i in 0..d {
        for (bound, is_lower) in [(domain.lower[i], true), (domain.upper[i], false)] {
            let Some(v) = bound else { continue };
            if i == d - 1 && is_lower && !with_gamma0 {
                continue;
            }
            let mut axes: Vec<Vec<f64>> = (0..d).map(|k| axis_samples(domain, k)).collect();
            axes[i] = vec![v];
            pts.extend(tensor(&axes));
        }
    }
    pts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn obstacle_needs_psi_and_compatibility() {
        let dom = DomainSpec::new(vec![Some(0.0)], vec![Some(2.0)]).unwrap();
        let mut spec = ProblemSpec::elliptic(ScalarField::zero(), ScalarField::zero());
        spec.kind = ProblemKind::EllipticObstacle;
        assert_eq!(spec.check(&dom), Err(Error::MissingField("psi".into())));
        let bad = ProblemSpec::elliptic(ScalarField::zero(), ScalarField::zero())
            .with_obstacle(ScalarField::expr(Expr::constant(1.0), 1.0));
        assert!(matches!(bad.check(&dom), Err(Error::Compatibility(_))));
        let ok = ProblemSpec::elliptic(ScalarField::zero(), ScalarField::expr(Expr::constant(2.0), 2.0))
            .with_obstacle(ScalarField::expr(Expr::constant(1.0), 1.0));
        assert!(ok.check(&dom).is_ok());
    }

    #[test]
    fn partial_boundary_skips_gamma0() {
        // psi exceeds g only on x_d = 0, which carries no data in scenario A.
        let dom = DomainSpec::new(vec![Some(0.0)], vec![Some(1.0)]).unwrap();
        let psi = ScalarField::expr(Expr::affine(1.0, vec![-1.0]), 1.0);
        let spec = ProblemSpec::elliptic(ScalarField::zero(), ScalarField::zero()).with_obstacle(psi);
        assert!(spec.clone().check(&dom).is_err());
        assert!(spec.with_scenario(Scenario::A).check(&dom).is_ok());
    }
}
