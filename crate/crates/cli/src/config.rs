//! Run configuration: one JSON document, optionally patched with dotted
//! `--set path=value` overrides before it is deserialized.

use std::path::Path;

use fkdegen::boundary::Scenario;
use fkdegen::domain::DomainSpec;
use fkdegen::expr::Expr;
use fkdegen::model::{preset, DiffusionModel, PresetParams};
use fkdegen::pde_oracle::OracleConfig;
use fkdegen::problem::{ProblemKind, ProblemSpec, ScalarField, Support, Variant};
use fkdegen::simulate::SimConfig;
use fkdegen::stopping::LsmcConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    /// Defaults to the half-space of the model's dimension.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<DomainSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<ProblemSection>,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub lsmc: LsmcConfig,
    #[serde(default)]
    pub classify: ClassifySection,
    #[serde(default)]
    pub exercise: ExerciseSection,
    #[serde(default)]
    pub compare: CompareSection,
    #[serde(default)]
    pub output: OutputSection,
}

/// Either a preset with parameters or a full coefficient catalog.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "PresetParams::is_empty")]
    pub params: PresetParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custom: Option<DiffusionModel>,
}

/// A scalar field from the expression catalog. Exactly one of `constant`,
/// `expr` and `generator_of` must be given; `generator_of: u` means
/// `A u` (elliptic) or `-u_t + A u` (parabolic).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constant: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expr: Option<Expr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator_of: Option<Expr>,
    /// `|field| <= growth_k (1 + |x|)`; required unless `constant` is used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub growth_k: Option<f64>,
    #[serde(default, skip_serializing_if = "is_everywhere")]
    pub support: Support,
}

fn is_everywhere(s: &Support) -> bool {
    *s == Support::Everywhere
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub kind: ProblemKind,
    #[serde(default)]
    pub variant: Variant,
    /// Classified from the model when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<Scenario>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    /// Evaluation point.
    pub x: Vec<f64>,
    #[serde(default)]
    pub t: f64,
    pub f: FieldConfig,
    pub g: FieldConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi: Option<FieldConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal: Option<FieldConfig>,
    /// `price` also evaluates along this sweep.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Sweep>,
}

/// Values replacing `x[axis]`, or `t` when `axis` is absent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis: Option<usize>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifySection {
    /// Defaults to `min(1, upper_d / 2)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_b: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExerciseSection {
    /// Solve the obstacle problem on a grid too (d <= 2): gives the free
    /// boundary and a second value from the grid's exercise region.
    pub oracle: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region_tol: Option<f64>,
}

impl Default for ExerciseSection {
    fn default() -> Self {
        ExerciseSection {
            oracle: true,
            region_tol: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSection {
    /// Points to compare at; `problem.x` when empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub points: Vec<Vec<f64>>,
    /// Known solution, reported alongside both estimates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact: Option<FieldConfig>,
    /// Bound on `max |MC - PDE|` recorded with the fixture.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Directory for CSV artifacts; none are written when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    /// Dump this many sample paths to `paths.csv`.
    #[serde(default)]
    pub dump_paths: usize,
}

/// Set `root.a.b.c = value`, creating objects on the way. The value is read
/// as JSON when it parses, as a string otherwise.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::config(format!("override `{assignment}` is not of the form path=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::config(format!("override path `{path}` has an empty segment")));
    }
    let mut cur = root;
    for (i, k) in keys.iter().enumerate() {
        let last = i + 1 == keys.len();
        cur = match cur {
            Value::Object(map) => {
                if last {
                    map.insert(k.to_string(), value);
                    return Ok(());
                }
                map.entry(k.to_string()).or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = k
                    .parse()
                    .map_err(|_| CliError::config(format!("override `{path}`: `{k}` indexes an array")))?;
                let len = items.len();
                let slot = items
                    .get_mut(idx)
                    .ok_or_else(|| CliError::config(format!("override `{path}`: index {idx} past length {len}")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            Value::Null => {
                *cur = Value::Object(Default::default());
                let Value::Object(map) = cur else { unreachable!() };
                if last {
                    map.insert(k.to_string(), value);
                    return Ok(());
                }
                map.entry(k.to_string()).or_insert_with(|| Value::Object(Default::default()))
            }
            _ => return Err(CliError::config(format!("override `{path}`: `{k}` is below a scalar"))),
        };
    }
    unreachable!("the loop returns on the last key")
}

impl RunConfig {
    /// Parse JSON text, apply overrides, and deserialize with the failing
    /// field path (and line, for syntax errors) in the message.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut root: Value = serde_json::from_str(text)
            .map_err(|e| CliError::config(format!("line {}, column {}: {e}", e.line(), e.column())))?;
        for o in overrides {
            apply_override(&mut root, o)?;
        }
        serde_path_to_error::deserialize(root).map_err(|e| {
            let path = e.path().to_string();
            CliError::config(format!("at `{path}`: {}", e.into_inner()))
        })
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::new("config/io", format!("cannot read {}: {e}", path.display()), 2))?;
        Self::parse(&text, overrides)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configs serialize")
    }

    pub fn build_model(&self) -> Result<DiffusionModel, CliError> {
        match (&self.model.preset, &self.model.custom) {
            (Some(name), None) => Ok(preset(name, &self.model.params)?),
            (None, Some(m)) => {
                if !self.model.params.is_empty() {
                    return Err(CliError::config("model.params only applies to presets".into()));
                }
                Ok(m.clone())
            }
            _ => Err(CliError::config("model needs exactly one of `preset` and `custom`".into())),
        }
    }

    pub fn build_domain(&self, model: &DiffusionModel) -> Result<DomainSpec, CliError> {
        let d = match &self.domain {
            Some(d) => DomainSpec::new(d.lower.clone(), d.upper.clone())?,
            None => DomainSpec::half_space(model.dim),
        };
        if d.dim() != model.dim {
            return Err(CliError::config(format!(
                "domain has {} axes, model `{}` has {}",
                d.dim(),
                model.name,
                model.dim
            )));
        }
        Ok(d)
    }

    pub fn problem(&self) -> Result<&ProblemSection, CliError> {
        self.problem
            .as_ref()
            .ok_or_else(|| CliError::new("compatibility/missing-field", "missing section `problem`".into(), 2))
    }

    /// Problem data without the scenario (filled in by the caller).
    pub fn build_problem(&self, model: &DiffusionModel) -> Result<ProblemSpec, CliError> {
        let p = self.problem()?;
        let parabolic = p.kind.is_parabolic();
        let field = |c: &FieldConfig, name: &str| c.build(model, parabolic, name);
        let mut spec = if parabolic {
            let h = p
                .horizon
                .ok_or_else(|| CliError::new("compatibility/missing-field", "missing field `problem.horizon`".into(), 2))?;
            ProblemSpec::parabolic(field(&p.f, "f")?, field(&p.g, "g")?, h)
        } else {
            ProblemSpec::elliptic(field(&p.f, "f")?, field(&p.g, "g")?)
        };
        spec.kind = p.kind;
        spec.variant = p.variant;
        spec.scenario = p.scenario;
        if let Some(psi) = &p.psi {
            spec.psi = Some(field(psi, "psi")?);
        }
        if let Some(h) = &p.terminal {
            spec.terminal = Some(field(h, "terminal")?);
        }
        if p.x.len() != model.dim {
            return Err(CliError::config(format!("problem.x has {} entries, model dimension is {}", p.x.len(), model.dim)));
        }
        Ok(spec)
    }
}

impl FieldConfig {
    pub fn constant(v: f64) -> Self {
        FieldConfig {
            constant: Some(v),
            expr: None,
            generator_of: None,
            growth_k: None,
            support: Support::Everywhere,
        }
    }

    pub fn build(&self, model: &DiffusionModel, parabolic: bool, name: &str) -> Result<ScalarField, CliError> {
        let k = |default: Option<f64>| {
            self.growth_k
                .or(default)
                .ok_or_else(|| CliError::config(format!("field `{name}` needs growth_k")))
        };
        let field = match (&self.constant, &self.expr, &self.generator_of) {
            (Some(v), None, None) => ScalarField::expr(Expr::constant(*v), k(Some(v.abs()))?),
            (None, Some(e), None) => ScalarField::expr(e.clone(), k(None)?),
            (None, None, Some(u)) => ScalarField::manufactured(model, u.clone(), parabolic, k(None)?),
            _ => {
                return Err(CliError::config(format!(
                    "field `{name}` needs exactly one of constant, expr, generator_of"
                )))
            }
        };
        Ok(field.with_support(self.support))
    }
}
