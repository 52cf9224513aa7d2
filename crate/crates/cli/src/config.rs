//! Strict scenario configuration.

use std::collections::BTreeMap;
use std::sync::Arc;

use impfrac::caputo::Convention;
use impfrac::resolvent::OperatorSpec;
use impfrac::solutions::{Forcing, ImpulseMap, ImpulsiveProblem};
use impfrac::verifier::Verdict;
use impfrac::{CMatrix, CVector, Complex64};
use serde::Deserialize;

use crate::error::{CliError, Result};
use crate::expr::ExprForcing;

/// Complex number as `[re, im]`.
pub type C = [f64; 2];

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub problem: ProblemConfig,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub alpha: f64,
    pub operator: OperatorConfig,
    #[serde(default)]
    pub forcing: ForcingConfig,
    pub x0: Vec<C>,
    #[serde(default)]
    pub impulses: Vec<ImpulseConfig>,
    pub horizon: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorConfig {
    Scalar(C),
    /// Dense rows.
    Matrix(Vec<Vec<C>>),
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ForcingConfig {
    #[default]
    Zero,
    Constant {
        value: Vec<C>,
    },
    /// `offset + slope·t`; defaults to `f(t) = t` in every component.
    Linear {
        #[serde(default)]
        slope: Option<Vec<C>>,
        #[serde(default)]
        offset: Option<Vec<C>>,
    },
    /// Coefficients of `t^0, t^1, …`, one vector each.
    Polynomial {
        coeffs: Vec<Vec<C>>,
    },
    Expression {
        components: Vec<ExprComponent>,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ExprComponent {
    Real(String),
    Complex([String; 2]),
}

/// Either a constant jump `value` or an affine map `b·x + c`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpulseConfig {
    pub time: f64,
    #[serde(default)]
    pub value: Option<Vec<C>>,
    #[serde(default)]
    pub b: Option<Vec<Vec<C>>>,
    #[serde(default)]
    pub c: Option<Vec<C>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub evaluators: Vec<String>,
    pub checks: Vec<String>,
    pub conventions: Vec<String>,
    pub nodes_per_piece: usize,
    pub base_divisions: usize,
    pub levels: usize,
    pub eval_per_piece: usize,
    pub half_step: bool,
    /// Tolerance of the quadrature-based checks.
    pub tol: f64,
    pub picard_tol: f64,
    pub picard_max_iter: usize,
    /// Nodes for the quadrature-based checks; default: three points after
    /// the first impulse.
    pub check_nodes: Option<Vec<f64>>,
    /// Outcome key → expected verdict.
    pub expect: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            evaluators: vec!["sol1".into(), "sol2".into(), "sol3".into()],
            checks: vec!["residual".into(), "jumps".into()],
            conventions: vec!["formula_extension".into()],
            nodes_per_piece: 64,
            base_divisions: 256,
            levels: 4,
            eval_per_piece: 16,
            half_step: false,
            tol: 1e-10,
            picard_tol: 1e-10,
            picard_max_iter: 50,
            check_nodes: None,
            expect: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub directory: String,
    pub formats: Vec<String>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { directory: "impfrac-out".into(), formats: vec!["csv".into(), "svg".into()] }
    }
}

pub const EVALUATORS: [&str; 4] = ["sol1", "sol2", "sol3", "picard"];
pub const CHECKS: [&str; 8] = [
    "residual",
    "restart",
    "jumps",
    "trajectory",
    "resolvent_identities",
    "shifted_origin",
    "restart_mismatch",
    "counterexample",
];
pub const HOLDS: &str = "HOLDS";
pub const VIOLATED: &str = "VIOLATED";

fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(CliError::ConfigInvalid(msg.into()))
}

fn cx(c: &C) -> Complex64 {
    Complex64::new(c[0], c[1])
}

fn vector(field: &str, v: &[C], dim: usize) -> Result<CVector> {
    if v.len() != dim {
        return invalid(format!("{field}: expected {dim} components, found {}", v.len()));
    }
    Ok(CVector::from_iterator(dim, v.iter().map(cx)))
}

fn matrix(field: &str, rows: &[Vec<C>], dim: usize) -> Result<CMatrix> {
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return invalid(format!("{field}: expected a {dim}×{dim} matrix"));
    }
    Ok(CMatrix::from_fn(dim, dim, |i, j| cx(&rows[i][j])))
}

/// Forcing as understood by the checks.
#[derive(Clone)]
pub enum ForcingKind {
    /// Coefficients of `t^j` (zero, constant, linear and polynomial).
    Polynomial(Vec<CVector>),
    Expression(Arc<ExprForcing>),
}

/// A validated scenario.
pub struct Scenario {
    pub config: ScenarioConfig,
    pub problem: ImpulsiveProblem,
    pub forcing: ForcingKind,
    pub conventions: Vec<Convention>,
    /// Jump vectors of constant impulses, `None` for affine ones.
    pub constant_impulses: Vec<Option<CVector>>,
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::ConfigInvalid(e.to_string()))
    }

    pub fn validate(self) -> Result<Scenario> {
        let p = &self.problem;
        if !(p.alpha > 0.0 && p.alpha < 1.0) {
            return invalid(format!("problem.alpha: {} not in (0, 1)", p.alpha));
        }
        if !(p.horizon > 0.0 && p.horizon.is_finite()) {
            return invalid(format!("problem.horizon: {} must be positive", p.horizon));
        }
        let dim = p.x0.len();
        if dim == 0 {
            return invalid("problem.x0: empty state");
        }
        let op = match &p.operator {
            OperatorConfig::Scalar(r) if dim == 1 => OperatorSpec::scalar(cx(r)),
            OperatorConfig::Scalar(_) => return invalid(format!("problem.operator: scalar operator with {dim}-dimensional x0")),
            OperatorConfig::Matrix(rows) => OperatorSpec::matrix(matrix("problem.operator.matrix", rows, dim)?)
                .map_err(|e| CliError::ConfigInvalid(format!("problem.operator.matrix: {e}")))?,
        };
        let x0 = vector("problem.x0", &p.x0, dim)?;
        let (forcing_kind, forcing) = match &p.forcing {
            ForcingConfig::Zero => (ForcingKind::Polynomial(vec![CVector::zeros(dim)]), Forcing::zero(dim)),
            ForcingConfig::Constant { value } => {
                let v = vector("problem.forcing.value", value, dim)?;
                (ForcingKind::Polynomial(vec![v.clone()]), Forcing::Polynomial(vec![v]))
            }
            ForcingConfig::Linear { slope, offset } => {
                let s = match slope {
                    Some(s) => vector("problem.forcing.slope", s, dim)?,
                    None => CVector::from_element(dim, Complex64::new(1.0, 0.0)),
                };
                let o = match offset {
                    Some(o) => vector("problem.forcing.offset", o, dim)?,
                    None => CVector::zeros(dim),
                };
                (ForcingKind::Polynomial(vec![o.clone(), s.clone()]), Forcing::Polynomial(vec![o, s]))
            }
            ForcingConfig::Polynomial { coeffs } => {
                if coeffs.is_empty() {
                    return invalid("problem.forcing.coeffs: empty");
                }
                let cs = coeffs
                    .iter()
                    .enumerate()
                    .map(|(j, c)| vector(&format!("problem.forcing.coeffs[{j}]"), c, dim))
                    .collect::<Result<Vec<_>>>()?;
                (ForcingKind::Polynomial(cs.clone()), Forcing::Polynomial(cs))
            }
            ForcingConfig::Expression { components } => {
                let parts: Vec<(String, Option<String>)> = components
                    .iter()
                    .map(|c| match c {
                        ExprComponent::Real(s) => (s.clone(), None),
                        ExprComponent::Complex([re, im]) => (re.clone(), Some(im.clone())),
                    })
                    .collect();
                let f = Arc::new(
                    ExprForcing::compile(&parts, dim).map_err(|e| CliError::ConfigInvalid(format!("problem.forcing: {e}")))?,
                );
                let g = f.clone();
                let forcing = if f.is_state_dependent() {
                    Forcing::state(move |t, x| g.eval(t, x))
                } else {
                    let zero = CVector::zeros(dim);
                    Forcing::time(move |t| g.eval(t, &zero))
                };
                (ForcingKind::Expression(f), forcing)
            }
        };
        let mut times = Vec::new();
        let mut maps = Vec::new();
        let mut constant = Vec::new();
        let mut last = 0.0;
        for (k, imp) in p.impulses.iter().enumerate() {
            let field = format!("problem.impulses[{k}]");
            if !(imp.time > last && imp.time < p.horizon) {
                return invalid(format!("{field}.time: {} must lie in ({last}, {}) (strictly increasing, inside (0, T))", imp.time, p.horizon));
            }
            last = imp.time;
            times.push(imp.time);
            match (&imp.value, &imp.b, &imp.c) {
                (Some(v), None, None) => {
                    let v = vector(&format!("{field}.value"), v, dim)?;
                    maps.push(ImpulseMap::constant(v.clone()));
                    constant.push(Some(v));
                }
                (None, b, c) if b.is_some() || c.is_some() => {
                    let b = b.as_ref().map(|b| matrix(&format!("{field}.b"), b, dim)).transpose()?;
                    let c = match c {
                        Some(c) => vector(&format!("{field}.c"), c, dim)?,
                        None => CVector::zeros(dim),
                    };
                    maps.push(ImpulseMap::Affine { b, c });
                    constant.push(None);
                }
                _ => return invalid(format!("{field}: give either `value` or `b`/`c`")),
            }
        }
        let problem = ImpulsiveProblem::new(p.alpha, op, forcing, x0, times, maps, p.horizon)
            .map_err(|e| CliError::ConfigInvalid(format!("problem: {e}")))?;

        let r = &self.run;
        for e in &r.evaluators {
            if !EVALUATORS.contains(&e.as_str()) {
                return invalid(format!("run.evaluators: unknown evaluator `{e}` (expected one of {EVALUATORS:?})"));
            }
        }
        if !problem.forcing.is_pure_time() && r.evaluators.iter().any(|e| e != "picard") {
            return invalid("run.evaluators: state-dependent forcing needs the `picard` evaluator only");
        }
        for c in &r.checks {
            if !CHECKS.contains(&c.as_str()) {
                return invalid(format!("run.checks: unknown check `{c}` (expected one of {CHECKS:?})"));
            }
        }
        let conventions = r
            .conventions
            .iter()
            .map(|c| Convention::from_name(c).ok_or_else(|| CliError::ConfigInvalid(format!("run.conventions: unknown convention `{c}`"))))
            .collect::<Result<Vec<_>>>()?;
        if r.levels < 2 || r.eval_per_piece == 0 || !r.base_divisions.is_multiple_of(2 * r.eval_per_piece) {
            return invalid("run: need levels ≥ 2 and base_divisions divisible by 2·eval_per_piece");
        }
        if r.nodes_per_piece < 2 {
            return invalid("run.nodes_per_piece: need at least 2");
        }
        if !(r.tol > 0.0 && r.picard_tol > 0.0) || r.picard_max_iter == 0 {
            return invalid("run: tolerances must be positive and picard_max_iter ≥ 1");
        }
        for (key, v) in &r.expect {
            if Verdict::from_name(v).is_none() && v != HOLDS && v != VIOLATED {
                return invalid(format!("run.expect.\"{key}\": unknown verdict `{v}`"));
            }
        }
        for f in &self.output.formats {
            if f != "csv" && f != "svg" {
                return invalid(format!("output.formats: unknown format `{f}`"));
            }
        }
        Ok(Scenario { config: self, problem, forcing: forcing_kind, conventions, constant_impulses: constant })
    }
}

pub fn load(text: &str) -> Result<Scenario> {
    ScenarioConfig::parse(text)?.validate()
}
