//! Impulsive problems and the three candidate solution formulas.
//!
//! Every piece of a trajectory carries a [`PieceFormula`]: a sum of
//! `S_α(s − shift)·v` terms plus a convolution `∫_o^s T_α(s − θ) f(θ) dθ`.
//! Polynomial forcing gives the convolution in closed form; any other
//! forcing is replaced by its piecewise-linear interpolant on the sample
//! grid, whose convolution is again exact in terms of Mittag-Leffler values.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::mlf::real_pow;
use crate::resolvent::{s_alpha, s_alpha_apply_signed, s_alpha_inverse, OperatorSpec};
use crate::{CMatrix, CVector};

/// Uniform sample nodes per piece.
pub const DEFAULT_NODES_PER_PIECE: usize = 512;
pub const PICARD_TOL: f64 = 1e-8;
pub const PICARD_MAX_ITER: usize = 50;

type TimeFn = dyn Fn(f64) -> CVector + Send + Sync;
type StateFn = dyn Fn(f64, &CVector) -> CVector + Send + Sync;
type MapFn = dyn Fn(&CVector) -> CVector + Send + Sync;

/// Right-hand side `f(t, x)`.
#[derive(Clone)]
pub enum Forcing {
    /// `Σ_m c_m t^m`.
    Polynomial(Vec<CVector>),
    Time(Arc<TimeFn>),
    State(Arc<StateFn>),
}

impl fmt::Debug for Forcing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Forcing::Polynomial(c) => f.debug_tuple("Polynomial").field(c).finish(),
            Forcing::Time(_) => f.write_str("Time(..)"),
            Forcing::State(_) => f.write_str("State(..)"),
        }
    }
}

impl Forcing {
    pub fn zero(dim: usize) -> Self {
        Forcing::Polynomial(vec![CVector::zeros(dim)])
    }

    pub fn time<F: Fn(f64) -> CVector + Send + Sync + 'static>(f: F) -> Self {
        Forcing::Time(Arc::new(f))
    }

    pub fn state<F: Fn(f64, &CVector) -> CVector + Send + Sync + 'static>(f: F) -> Self {
        Forcing::State(Arc::new(f))
    }

    pub fn is_pure_time(&self) -> bool {
        !matches!(self, Forcing::State(_))
    }

    pub fn eval(&self, t: f64, x: &CVector) -> CVector {
        match self {
            Forcing::Polynomial(c) => poly_eval(c, t),
            Forcing::Time(f) => f(t),
            Forcing::State(f) => f(t, x),
        }
    }
}

fn poly_eval(c: &[CVector], t: f64) -> CVector {
    let mut acc = c.last().expect("non-empty coefficients").clone();
    for v in c.iter().rev().skip(1) {
        acc = acc * Complex64::new(t, 0.0) + v;
    }
    acc
}

/// Impulse map `I_k`.
#[derive(Clone)]
pub enum ImpulseMap {
    /// `B x + c`; `b = None` is a constant impulse.
    Affine { b: Option<CMatrix>, c: CVector },
    General(Arc<MapFn>),
}

impl fmt::Debug for ImpulseMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ImpulseMap::Affine { b, c } => f.debug_struct("Affine").field("b", b).field("c", c).finish(),
            ImpulseMap::General(_) => f.write_str("General(..)"),
        }
    }
}

impl ImpulseMap {
    pub fn constant(c: CVector) -> Self {
        ImpulseMap::Affine { b: None, c }
    }

    pub fn general<F: Fn(&CVector) -> CVector + Send + Sync + 'static>(f: F) -> Self {
        ImpulseMap::General(Arc::new(f))
    }

    pub fn apply(&self, x: &CVector) -> Result<CVector> {
        let out = match self {
            ImpulseMap::Affine { b: None, c } => c.clone(),
            ImpulseMap::Affine { b: Some(b), c } => b * x + c,
            ImpulseMap::General(f) => f(x),
        };
        if out.len() != x.len() {
            return Err(Error::DimensionMismatch { expected: x.len(), found: out.len() });
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct ImpulsiveProblem {
    pub alpha: f64,
    pub op: OperatorSpec,
    pub forcing: Forcing,
    pub x0: CVector,
    pub impulse_times: Vec<f64>,
    pub impulse_maps: Vec<ImpulseMap>,
    pub horizon: f64,
}

impl ImpulsiveProblem {
    pub fn new(
        alpha: f64,
        op: OperatorSpec,
        forcing: Forcing,
        x0: CVector,
        impulse_times: Vec<f64>,
        impulse_maps: Vec<ImpulseMap>,
        horizon: f64,
    ) -> Result<Self> {
        let p = ImpulsiveProblem { alpha, op, forcing, x0, impulse_times, impulse_maps, horizon };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("fractional order {} not in (0, 1)", self.alpha)));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!("horizon {} must be positive", self.horizon)));
        }
        let n = self.op.dim();
        if self.x0.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: self.x0.len() });
        }
        if self.impulse_maps.len() != self.impulse_times.len() {
            return Err(Error::InvalidArgument(format!(
                "{} impulse times but {} impulse maps",
                self.impulse_times.len(),
                self.impulse_maps.len()
            )));
        }
        let mut prev = 0.0;
        for &t in &self.impulse_times {
            if !(t > prev && t < self.horizon) {
                return Err(Error::InvalidArgument(format!(
                    "impulse times must satisfy 0 < t_1 < ... < t_m < T = {}; got {t}",
                    self.horizon
                )));
            }
            prev = t;
        }
        for m in &self.impulse_maps {
            if let ImpulseMap::Affine { b, c } = m {
                if c.len() != n {
                    return Err(Error::DimensionMismatch { expected: n, found: c.len() });
                }
                if let Some(b) = b {
                    if b.nrows() != n || b.ncols() != n {
                        return Err(Error::DimensionMismatch { expected: n, found: b.nrows() });
                    }
                }
            }
        }
        if let Forcing::Polynomial(c) = &self.forcing {
            if c.is_empty() {
                return Err(Error::InvalidArgument("polynomial forcing needs a coefficient".into()));
            }
            if let Some(bad) = c.iter().find(|v| v.len() != n) {
                return Err(Error::DimensionMismatch { expected: n, found: bad.len() });
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.op.dim()
    }

    /// `[t_0, t_1, …, t_m, T]`.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut b = Vec::with_capacity(self.impulse_times.len() + 2);
        b.push(0.0);
        b.extend_from_slice(&self.impulse_times);
        b.push(self.horizon);
        b
    }

    pub fn piece_count(&self) -> usize {
        self.impulse_times.len() + 1
    }
}

/// A piecewise-linear function on `nodes`, possibly discontinuous at nodes.
/// On `[nodes[j], nodes[j+1]]` it runs from `right[j]` to `left[j+1]`.
#[derive(Debug, Clone)]
pub struct SampledForcing {
    pub nodes: Vec<f64>,
    pub left: Vec<CVector>,
    pub right: Vec<CVector>,
}

impl SampledForcing {
    pub fn continuous(nodes: Vec<f64>, values: Vec<CVector>) -> Self {
        SampledForcing { nodes, left: values.clone(), right: values }
    }

    /// Jump and slope-change coefficients of the representation
    /// `g = Σ_j J_j·H(θ − θ_j) + Δm_j·(θ − θ_j)_+` starting at node `from`.
    fn decompose(&self, from: usize) -> (Vec<CVector>, Vec<CVector>) {
        let n = self.nodes.len();
        let dim = self.right[0].len();
        let mut jumps = Vec::with_capacity(n - from);
        let mut dslopes = Vec::with_capacity(n - from);
        let mut prev_slope = CVector::zeros(dim);
        for j in from..n {
            let jump = if j == from { self.right[j].clone() } else { &self.right[j] - &self.left[j] };
            let slope = if j + 1 < n {
                (&self.left[j + 1] - &self.right[j]) / Complex64::new(self.nodes[j + 1] - self.nodes[j], 0.0)
            } else {
                CVector::zeros(dim)
            };
            jumps.push(jump);
            dslopes.push(&slope - &prev_slope);
            prev_slope = slope;
        }
        (jumps, dslopes)
    }
}

/// Memoised `U(d) = d^α E_{α,α+1}(A d^α)` and `V(d) = d^{α+1} E_{α,α+2}(A d^α)`,
/// keyed by the distance `d` rounded to `quantum`.
pub struct KernelCache<'a> {
    alpha: f64,
    op: &'a OperatorSpec,
    quantum: f64,
    map: HashMap<i64, Arc<(CMatrix, CMatrix)>>,
}

impl<'a> KernelCache<'a> {
    pub fn new(alpha: f64, op: &'a OperatorSpec, scale: f64) -> Self {
        KernelCache { alpha, op, quantum: 1e-13 * scale.max(1.0), map: HashMap::new() }
    }

    pub fn uv(&mut self, d: f64) -> Result<Arc<(CMatrix, CMatrix)>> {
        let key = (d / self.quantum).round() as i64;
        if let Some(v) = self.map.get(&key) {
            return Ok(v.clone());
        }
        let a = self.alpha;
        let c = real_pow(d, a);
        let u = self.op.ml_matrix(a, a + 1.0, c)? * c;
        let v = self.op.ml_matrix(a, a + 2.0, c)? * (c * d);
        let entry = Arc::new((u, v));
        self.map.insert(key, entry.clone());
        Ok(entry)
    }
}

/// Convolution part of a piece formula.
#[derive(Debug, Clone)]
pub enum ConvPart {
    None,
    /// `∫_origin^s T_α(s−θ) Σ_m c_m θ^m dθ`, stored as coefficients of
    /// `(θ − origin)^j`.
    Polynomial { origin: f64, shifted: Vec<CVector> },
    /// Convolution against a piecewise-linear forcing starting at
    /// `data.nodes[from]`.
    Sampled { from: usize, data: Arc<SampledForcing>, jumps: Arc<Vec<CVector>>, dslopes: Arc<Vec<CVector>> },
}

impl ConvPart {
    pub fn polynomial(origin: f64, coeffs: &[CVector]) -> Self {
        // Σ_m c_m θ^m = Σ_j d_j (θ − o)^j with d_j = Σ_{m≥j} C(m, j) o^{m−j} c_m
        let deg = coeffs.len();
        let mut shifted = vec![CVector::zeros(coeffs[0].len()); deg];
        for (m, c) in coeffs.iter().enumerate() {
            let mut binom = 1.0;
            for (j, d) in shifted.iter_mut().enumerate().take(m + 1) {
                if j > 0 {
                    binom = binom * (m + 1 - j) as f64 / j as f64;
                }
                *d += c * Complex64::new(binom * origin.powi((m - j) as i32), 0.0);
            }
        }
        ConvPart::Polynomial { origin, shifted }
    }

    pub fn sampled(data: Arc<SampledForcing>, from: usize) -> Self {
        let (jumps, dslopes) = data.decompose(from);
        ConvPart::Sampled { from, data, jumps: Arc::new(jumps), dslopes: Arc::new(dslopes) }
    }

    pub fn origin(&self) -> Option<f64> {
        match self {
            ConvPart::None => None,
            ConvPart::Polynomial { origin, .. } => Some(*origin),
            ConvPart::Sampled { from, data, .. } => Some(data.nodes[*from]),
        }
    }
}

/// Closed-form descriptor of one piece: `Σ S_α(s − shift_j)·v_j + conv(s)`.
#[derive(Debug, Clone)]
pub struct PieceFormula {
    pub terms: Vec<(f64, CVector)>,
    pub conv: ConvPart,
}

impl PieceFormula {
    /// Points where the formula is not smooth.
    pub fn singular_points(&self) -> Vec<f64> {
        let mut p: Vec<f64> = self.terms.iter().map(|(s, _)| *s).collect();
        if let Some(o) = self.conv.origin() {
            p.push(o);
        }
        p
    }

    /// Whether the formula can be evaluated at `s` (sampled convolutions
    /// are only defined from their origin onward).
    pub fn defined_at(&self, s: f64) -> bool {
        match &self.conv {
            ConvPart::Sampled { .. } => s >= self.conv.origin().unwrap_or(0.0),
            _ => true,
        }
    }

    pub fn value(&self, alpha: f64, op: &OperatorSpec, s: f64) -> Result<CVector> {
        let scale = s.abs().max(1.0);
        let mut cache = KernelCache::new(alpha, op, scale);
        self.value_cached(alpha, op, s, &mut cache)
    }

    pub fn value_cached(&self, alpha: f64, op: &OperatorSpec, s: f64, cache: &mut KernelCache) -> Result<CVector> {
        let mut acc = CVector::zeros(op.dim());
        for (shift, v) in &self.terms {
            acc += s_alpha_apply_signed(alpha, op, s - shift, v)?;
        }
        match &self.conv {
            ConvPart::None => {}
            ConvPart::Polynomial { origin, shifted } => {
                let u = s - origin;
                if u != 0.0 {
                    let c = real_pow(u, alpha);
                    let mut fact = 1.0;
                    for (j, d) in shifted.iter().enumerate() {
                        if j > 0 {
                            fact *= j as f64;
                        }
                        let w = real_pow(u, alpha + j as f64) * fact;
                        acc += op.ml_apply(alpha, alpha + j as f64 + 1.0, c, d)? * w;
                    }
                }
            }
            ConvPart::Sampled { from, data, jumps, dslopes } => {
                let origin = data.nodes[*from];
                if s < origin {
                    return Err(Error::MissingPieceFormula(format!(
                        "sampled convolution from {origin} has no continuation to {s}"
                    )));
                }
                for (i, theta) in data.nodes[*from..].iter().enumerate() {
                    let d = s - theta;
                    if d <= 0.0 {
                        break;
                    }
                    let uv = cache.uv(d)?;
                    acc += &uv.0 * &jumps[i] + &uv.1 * &dslopes[i];
                }
            }
        }
        Ok(acc)
    }

    /// d/ds of the formula; `None` for sampled convolutions, whose
    /// derivative has an integrable singularity at every node.
    pub fn derivative(&self, alpha: f64, op: &OperatorSpec, s: f64) -> Option<Result<CVector>> {
        if let ConvPart::Sampled { .. } = self.conv {
            return None;
        }
        Some(self.derivative_closed(alpha, op, s))
    }

    fn derivative_closed(&self, alpha: f64, op: &OperatorSpec, s: f64) -> Result<CVector> {
        let mut acc = CVector::zeros(op.dim());
        for (shift, v) in &self.terms {
            // d/ds E_{α,1}(A u^α) v = u^{α−1} E_{α,α}(A u^α) A v
            let u = s - shift;
            let av = op.apply(v);
            acc += op.ml_apply(alpha, alpha, real_pow(u, alpha), &av)? * real_pow(u, alpha - 1.0);
        }
        if let ConvPart::Polynomial { origin, shifted } = &self.conv {
            // d/du [u^{α+j} E_{α,α+j+1}(A u^α)] = u^{α+j−1} E_{α,α+j}(A u^α)
            let u = s - origin;
            let c = real_pow(u, alpha);
            let mut fact = 1.0;
            for (j, d) in shifted.iter().enumerate() {
                if j > 0 {
                    fact *= j as f64;
                }
                let w = real_pow(u, alpha + j as f64 - 1.0) * fact;
                acc += op.ml_apply(alpha, alpha + j as f64, c, d)? * w;
            }
        }
        Ok(acc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Evaluator {
    /// Restarted formula: each piece starts afresh at `t_k`.
    Sol1,
    /// Global formula with `S_α(t − t_i) I_i` impulse terms.
    Sol2,
    /// Global formula with `S_α(t) S_α(t_i)⁻¹ I_i` impulse terms.
    Sol3,
    Picard,
}

impl Evaluator {
    pub fn name(self) -> &'static str {
        match self {
            Evaluator::Sol1 => "sol1",
            Evaluator::Sol2 => "sol2",
            Evaluator::Sol3 => "sol3",
            Evaluator::Picard => "picard",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Piece {
    pub start: f64,
    pub end: f64,
    /// Sample times in `(start, end]`.
    pub times: Vec<f64>,
    pub values: Vec<CVector>,
    pub formula: PieceFormula,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub evaluator: Evaluator,
    pub alpha: f64,
    pub op: OperatorSpec,
    pub x0: CVector,
    pub impulse_times: Vec<f64>,
    pub pieces: Vec<Piece>,
    /// `x(t_k^−)`, one per impulse.
    pub left: Vec<CVector>,
    /// `x(t_k^+)`, one per impulse.
    pub right: Vec<CVector>,
    /// `I_k(x(t_k^−))` as applied.
    pub impulses: Vec<CVector>,
    /// Per-piece `z_k` of the corrected formula (empty for other evaluators).
    pub coefficients: Vec<CVector>,
    /// Picard: number of updates before the iterate stopped moving.
    pub iterations: Option<usize>,
    pub picard_differences: Vec<f64>,
}

impl Trajectory {
    pub fn jump(&self, k: usize) -> CVector {
        &self.right[k] - &self.left[k]
    }

    /// Index of the piece owning `t`; pieces are `(t_k, t_{k+1}]` and piece 0
    /// also owns `t = 0`.
    pub fn piece_index(&self, t: f64) -> usize {
        self.impulse_times.iter().take_while(|&&tk| tk < t).count()
    }

    /// Value at `t` from the owning piece's formula.
    pub fn value_at(&self, t: f64) -> Result<CVector> {
        if t == 0.0 {
            return Ok(self.x0.clone());
        }
        let k = self.piece_index(t);
        self.pieces[k].formula.value(self.alpha, &self.op, t)
    }

    /// All samples in time order, starting with `(0, x0)`; impulse times
    /// appear once, carrying the left value.
    pub fn samples(&self) -> Vec<(usize, f64, CVector)> {
        let mut out = vec![(0, 0.0, self.x0.clone())];
        for (k, p) in self.pieces.iter().enumerate() {
            for (t, v) in p.times.iter().zip(&p.values) {
                out.push((k, *t, v.clone()));
            }
        }
        out
    }
}

/// Sample-grid options for the evaluators.
#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    pub nodes_per_piece: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { nodes_per_piece: DEFAULT_NODES_PER_PIECE }
    }
}

fn piece_times(start: f64, end: f64, n: usize) -> Vec<f64> {
    let h = (end - start) / n as f64;
    (1..=n).map(|j| if j == n { end } else { start + j as f64 * h }).collect()
}

/// `[0] ∪` every piece's sample times.
fn global_nodes(problem: &ImpulsiveProblem, n: usize) -> Vec<f64> {
    let b = problem.breakpoints();
    let mut nodes = vec![0.0];
    for w in b.windows(2) {
        nodes.extend(piece_times(w[0], w[1], n));
    }
    nodes
}

fn check_nodes(opts: &EvalOptions) -> Result<()> {
    if opts.nodes_per_piece < 2 {
        return Err(Error::InvalidArgument("need at least 2 nodes per piece".into()));
    }
    Ok(())
}

/// Convolution part with origin `origin`, shared sample data for
/// non-polynomial forcing.
fn conv_for(problem: &ImpulsiveProblem, origin: f64, sampled: &Option<(Arc<SampledForcing>, Vec<f64>)>) -> ConvPart {
    match (&problem.forcing, sampled) {
        (Forcing::Polynomial(c), _) => ConvPart::polynomial(origin, c),
        (_, Some((data, nodes))) => {
            let from = nodes.iter().position(|&t| t == origin).expect("origin is a grid node");
            ConvPart::sampled(data.clone(), from)
        }
        _ => ConvPart::None,
    }
}

fn sample_time_forcing(problem: &ImpulsiveProblem, n: usize) -> Result<Option<(Arc<SampledForcing>, Vec<f64>)>> {
    match &problem.forcing {
        Forcing::Polynomial(_) => Ok(None),
        Forcing::Time(f) => {
            let nodes = global_nodes(problem, n);
            let values: Vec<CVector> = nodes.iter().map(|&t| f(t)).collect();
            if let Some(bad) = values.iter().find(|v| v.len() != problem.dim()) {
                return Err(Error::DimensionMismatch { expected: problem.dim(), found: bad.len() });
            }
            Ok(Some((Arc::new(SampledForcing::continuous(nodes.clone(), values)), nodes)))
        }
        Forcing::State(_) => Err(Error::InvalidArgument(
            "state-dependent forcing needs solve_semilinear_picard".into(),
        )),
    }
}

/// Builds pieces from a per-piece formula constructor. `build(k, left)`
/// receives `x(t_k^−)` (None for k = 0) and returns the piece formula plus
/// the impulse applied at `t_k`.
fn assemble<B>(problem: &ImpulsiveProblem, opts: &EvalOptions, evaluator: Evaluator, mut build: B) -> Result<Trajectory>
where
    B: FnMut(usize, Option<&CVector>) -> Result<(PieceFormula, Option<CVector>)>,
{
    problem.validate()?;
    check_nodes(opts)?;
    let alpha = problem.alpha;
    let op = &problem.op;
    let b = problem.breakpoints();
    let mut pieces = Vec::with_capacity(b.len() - 1);
    let (mut left, mut right, mut impulses) = (Vec::new(), Vec::new(), Vec::new());
    let mut prev_left: Option<CVector> = None;
    for k in 0..b.len() - 1 {
        let (formula, impulse) = build(k, prev_left.as_ref())?;
        let mut cache = KernelCache::new(alpha, op, problem.horizon);
        if k > 0 {
            let l = prev_left.take().expect("left value at impulse");
            let r = formula.value_cached(alpha, op, b[k], &mut cache)?;
            left.push(l);
            right.push(r);
            impulses.push(impulse.expect("impulse at t_k"));
        }
        let times = piece_times(b[k], b[k + 1], opts.nodes_per_piece);
        let values = times
            .iter()
            .map(|&t| formula.value_cached(alpha, op, t, &mut cache))
            .collect::<Result<Vec<_>>>()?;
        if k + 1 < b.len() - 1 {
            // chain through the closed form at t_{k+1}, not the samples
            prev_left = Some(formula.value_cached(alpha, op, b[k + 1], &mut cache)?);
        }
        pieces.push(Piece { start: b[k], end: b[k + 1], times, values, formula });
    }
    Ok(Trajectory {
        evaluator,
        alpha,
        op: problem.op.clone(),
        x0: problem.x0.clone(),
        impulse_times: problem.impulse_times.clone(),
        pieces,
        left,
        right,
        impulses,
        coefficients: Vec::new(),
        iterations: None,
        picard_differences: Vec::new(),
    })
}

/// Restarted formula: piece k is `S_α(t − t_k)[x(t_k^−) + I_k] + ∫_{t_k}^t T_α(t−θ) f dθ`.
pub fn eval_sol1(problem: &ImpulsiveProblem) -> Result<Trajectory> {
    eval_sol1_with(problem, &EvalOptions::default())
}

pub fn eval_sol1_with(problem: &ImpulsiveProblem, opts: &EvalOptions) -> Result<Trajectory> {
    let sampled = sample_time_forcing(problem, opts.nodes_per_piece)?;
    let b = problem.breakpoints();
    assemble(problem, opts, Evaluator::Sol1, |k, left| {
        let conv = conv_for(problem, b[k], &sampled);
        match left {
            None => Ok((PieceFormula { terms: vec![(0.0, problem.x0.clone())], conv }, None)),
            Some(l) => {
                let imp = problem.impulse_maps[k - 1].apply(l)?;
                Ok((PieceFormula { terms: vec![(b[k], l + &imp)], conv }, Some(imp)))
            }
        }
    })
}

/// Global formula: `S_α(t) x_0 + Σ_{t_i < t} S_α(t − t_i) I_i + ∫_0^t T_α(t−θ) f dθ`.
pub fn eval_sol2(problem: &ImpulsiveProblem) -> Result<Trajectory> {
    eval_sol2_with(problem, &EvalOptions::default())
}

pub fn eval_sol2_with(problem: &ImpulsiveProblem, opts: &EvalOptions) -> Result<Trajectory> {
    let sampled = sample_time_forcing(problem, opts.nodes_per_piece)?;
    let b = problem.breakpoints();
    let mut terms = vec![(0.0, problem.x0.clone())];
    assemble(problem, opts, Evaluator::Sol2, |k, left| {
        let conv = conv_for(problem, 0.0, &sampled);
        let imp = match left {
            None => None,
            Some(l) => {
                let imp = problem.impulse_maps[k - 1].apply(l)?;
                terms.push((b[k], imp.clone()));
                Some(imp)
            }
        };
        Ok((PieceFormula { terms: terms.clone(), conv }, imp))
    })
}

/// Corrected formula: `S_α(t) z_k + ∫_0^t T_α(t−θ) f dθ` with
/// `z_k = x_0 + Σ_{i≤k} S_α(t_i)⁻¹ I_i(x(t_i^−))`.
pub fn eval_sol3(problem: &ImpulsiveProblem) -> Result<Trajectory> {
    eval_sol3_with(problem, &EvalOptions::default())
}

pub fn eval_sol3_with(problem: &ImpulsiveProblem, opts: &EvalOptions) -> Result<Trajectory> {
    let sampled = sample_time_forcing(problem, opts.nodes_per_piece)?;
    let b = problem.breakpoints();
    let mut z = problem.x0.clone();
    let mut coefficients = Vec::new();
    let mut traj = assemble(problem, opts, Evaluator::Sol3, |k, left| {
        let conv = conv_for(problem, 0.0, &sampled);
        let imp = match left {
            None => None,
            Some(l) => {
                let imp = problem.impulse_maps[k - 1].apply(l)?;
                let inv = s_alpha_inverse(problem.alpha, &problem.op, b[k])?;
                z = &z + inv * &imp;
                Some(imp)
            }
        };
        coefficients.push(z.clone());
        Ok((PieceFormula { terms: vec![(0.0, z.clone())], conv }, imp))
    })?;
    traj.coefficients = coefficients;
    Ok(traj)
}

/// `∫_0^t T_α(t−θ) f(θ) dθ` by product integration: `f` is interpolated
/// piecewise linearly on `⌈t/h⌉` uniform cells and the kernel is integrated
/// exactly against the interpolant.
pub fn convolve_t_alpha<F: Fn(f64) -> CVector>(alpha: f64, op: &OperatorSpec, f: F, t: f64, h: f64) -> Result<CVector> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidArgument(format!("fractional order {alpha} not in (0, 1]")));
    }
    if !(t > 0.0) || !(h > 0.0) {
        return Err(Error::InvalidArgument("convolution needs t > 0 and h > 0".into()));
    }
    let n = ((t / h).ceil() as usize).max(1);
    let nodes: Vec<f64> = (0..=n).map(|j| if j == n { t } else { t * j as f64 / n as f64 }).collect();
    let values: Vec<CVector> = nodes.iter().map(|&s| f(s)).collect();
    if let Some(bad) = values.iter().find(|v| v.len() != op.dim()) {
        return Err(Error::DimensionMismatch { expected: op.dim(), found: bad.len() });
    }
    let conv = ConvPart::sampled(Arc::new(SampledForcing::continuous(nodes, values)), 0);
    let formula = PieceFormula { terms: Vec::new(), conv };
    let mut cache = KernelCache::new(alpha, op, t);
    formula.value_cached(alpha, op, t, &mut cache)
}

/// Picard iteration for the corrected formula with state-dependent forcing.
///
/// Starting from `x ≡ x_0`, each update samples `f(θ, x(θ))` on the grid,
/// interpolates it piecewise linearly and evaluates the corrected formula
/// exactly for that interpolant. Converges when successive iterates differ
/// by at most `tol` in the sup norm over all samples and one-sided values.
/// `f` is assumed Lipschitz in `x`; this is not checked.
pub fn solve_semilinear_picard(problem: &ImpulsiveProblem, opts: &EvalOptions, tol: f64, max_iter: usize) -> Result<Trajectory> {
    problem.validate()?;
    check_nodes(opts)?;
    if !(tol > 0.0) || max_iter == 0 {
        return Err(Error::InvalidArgument("Picard needs tol > 0 and max_iter ≥ 1".into()));
    }
    let alpha = problem.alpha;
    let op = &problem.op;
    let n_per = opts.nodes_per_piece;
    let b = problem.breakpoints();
    let m = problem.impulse_times.len();
    let nodes = global_nodes(problem, n_per);
    // node index of t_k
    let knot = |k: usize| k * n_per;
    let s_at: Vec<CMatrix> = nodes.iter().map(|&t| s_alpha(alpha, op, t)).collect::<Result<_>>()?;
    let inverses: Vec<CMatrix> = problem
        .impulse_times
        .iter()
        .map(|&t| s_alpha_inverse(alpha, op, t))
        .collect::<Result<_>>()?;
    let mut cache = KernelCache::new(alpha, op, problem.horizon);

    let mut xl: Vec<CVector> = vec![problem.x0.clone(); nodes.len()];
    let mut xr = xl.clone();
    let mut diffs = Vec::new();
    for iter in 0..max_iter {
        let gl: Vec<CVector> = nodes.iter().zip(&xl).map(|(&t, x)| problem.forcing.eval(t, x)).collect();
        let gr: Vec<CVector> = nodes.iter().zip(&xr).map(|(&t, x)| problem.forcing.eval(t, x)).collect();
        if let Some(bad) = gr.iter().find(|v| v.len() != problem.dim()) {
            return Err(Error::DimensionMismatch { expected: problem.dim(), found: bad.len() });
        }
        let data = Arc::new(SampledForcing { nodes: nodes.clone(), left: gl, right: gr });
        let conv = ConvPart::sampled(data.clone(), 0);
        let probe = PieceFormula { terms: Vec::new(), conv: conv.clone() };
        let c: Vec<CVector> = nodes
            .iter()
            .map(|&t| probe.value_cached(alpha, op, t, &mut cache))
            .collect::<Result<_>>()?;

        let mut new_l = Vec::with_capacity(nodes.len());
        let mut new_r = Vec::with_capacity(nodes.len());
        let mut z = problem.x0.clone();
        let mut zs = vec![z.clone()];
        let mut impulses = Vec::with_capacity(m);
        for (i, ci) in c.iter().enumerate() {
            let val = &s_at[i] * &z + ci;
            let k = (1..=m).find(|&k| knot(k) == i);
            match k {
                Some(k) => {
                    let imp = problem.impulse_maps[k - 1].apply(&val)?;
                    z = &z + &inverses[k - 1] * &imp;
                    zs.push(z.clone());
                    new_r.push(&s_at[i] * &z + ci);
                    new_l.push(val);
                    impulses.push(imp);
                }
                None => {
                    new_r.push(val.clone());
                    new_l.push(val);
                }
            }
        }
        let diff = new_l
            .iter()
            .zip(&xl)
            .chain(new_r.iter().zip(&xr))
            .map(|(a, b)| sup_norm(&(a - b)))
            .fold(0.0, f64::max);
        diffs.push(diff);
        xl = new_l;
        xr = new_r;
        if diff <= tol {
            let mut pieces = Vec::with_capacity(m + 1);
            for k in 0..=m {
                let range = knot(k) + 1..=knot(k + 1);
                pieces.push(Piece {
                    start: b[k],
                    end: b[k + 1],
                    times: nodes[range.clone()].to_vec(),
                    values: xl[range].to_vec(),
                    formula: PieceFormula { terms: vec![(0.0, zs[k].clone())], conv: conv.clone() },
                });
            }
            let left: Vec<CVector> = (1..=m).map(|k| xl[knot(k)].clone()).collect();
            let right: Vec<CVector> = (1..=m).map(|k| xr[knot(k)].clone()).collect();
            return Ok(Trajectory {
                evaluator: Evaluator::Picard,
                alpha,
                op: problem.op.clone(),
                x0: problem.x0.clone(),
                impulse_times: problem.impulse_times.clone(),
                pieces,
                left,
                right,
                impulses,
                coefficients: zs,
                iterations: Some(iter),
                picard_differences: diffs,
            });
        }
    }
    Err(Error::NotConverged { iterations: max_iter, last_difference: *diffs.last().expect("ran once") })
}

/// Largest component modulus.
pub fn sup_norm(v: &CVector) -> f64 {
    v.iter().map(|c| c.norm()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gamma::gamma;
    use crate::mlf::{mlf_series, MLArgs};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn v1(x: f64) -> CVector {
        CVector::from_element(1, c(x, 0.0))
    }

    fn example(forcing: Forcing, times: Vec<f64>) -> ImpulsiveProblem {
        let maps = times.iter().map(|_| ImpulseMap::constant(v1(1.0))).collect();
        ImpulsiveProblem::new(2.0 / 3.0, OperatorSpec::scalar(c(-1.0, 0.0)), forcing, v1(0.5), times, maps, 2.0).unwrap()
    }

    fn linear() -> Forcing {
        Forcing::Polynomial(vec![v1(0.0), v1(1.0)])
    }

    #[test]
    fn initial_value_and_jumps() {
        let opts = EvalOptions { nodes_per_piece: 16 };
        let p = example(linear(), vec![1.0]);
        for traj in [eval_sol1_with(&p, &opts), eval_sol2_with(&p, &opts), eval_sol3_with(&p, &opts)] {
            let traj = traj.unwrap();
            assert_eq!(traj.value_at(0.0).unwrap(), p.x0);
            assert_eq!(traj.pieces[0].formula.value(p.alpha, &p.op, 0.0).unwrap(), p.x0);
            assert!((traj.jump(0) - &traj.impulses[0]).norm() < 1e-11);
        }
    }

    #[test]
    fn corrected_coefficient() {
        let p = example(linear(), vec![1.0]);
        let traj = eval_sol3_with(&p, &EvalOptions { nodes_per_piece: 8 }).unwrap();
        let e = mlf_series(MLArgs::new(2.0 / 3.0, 1.0).unwrap(), c(-1.0, 0.0)).unwrap();
        assert!((traj.coefficients[1][0] - (c(0.5, 0.0) + 1.0 / e)).norm() < 1e-12);
    }

    #[test]
    fn evaluators_agree_without_impulses() {
        let opts = EvalOptions { nodes_per_piece: 32 };
        let p = example(linear(), vec![]);
        let a = eval_sol1_with(&p, &opts).unwrap();
        let b = eval_sol2_with(&p, &opts).unwrap();
        let d = eval_sol3_with(&p, &opts).unwrap();
        for ((x, y), z) in a.pieces[0].values.iter().zip(&b.pieces[0].values).zip(&d.pieces[0].values) {
            assert!((x - y).norm() < 1e-10 && (x - z).norm() < 1e-10);
        }
    }

    #[test]
    fn linear_forcing_is_sampled_exactly() {
        let opts = EvalOptions { nodes_per_piece: 64 };
        let closed = eval_sol3_with(&example(linear(), vec![1.0]), &opts).unwrap();
        let sampled = eval_sol3_with(&example(Forcing::time(v1), vec![1.0]), &opts).unwrap();
        for (p, q) in closed.pieces.iter().zip(&sampled.pieces) {
            for (x, y) in p.values.iter().zip(&q.values) {
                assert!((x - y).norm() < 1e-12, "{}", (x - y).norm());
            }
        }
        let closed = eval_sol1_with(&example(linear(), vec![1.0]), &opts).unwrap();
        let sampled = eval_sol1_with(&example(Forcing::time(v1), vec![1.0]), &opts).unwrap();
        assert!((&closed.pieces[1].values[40] - &sampled.pieces[1].values[40]).norm() < 1e-12);
    }

    #[test]
    fn convolution_against_free_moment() {
        let alpha = 0.55;
        let zero = OperatorSpec::scalar(c(0.0, 0.0));
        let v = convolve_t_alpha(alpha, &zero, |_| v1(1.0), 1.7, 0.1).unwrap();
        assert!((v[0].re - 1.7f64.powf(alpha) / gamma(alpha + 1.0)).abs() < 1e-13);
        let v = convolve_t_alpha(alpha, &zero, |_| v1(0.0), 1.7, 0.1).unwrap();
        assert_eq!(v[0], c(0.0, 0.0));
    }

    #[test]
    fn polynomial_shift_expansion() {
        // the closed form must not depend on where the expansion is centred
        let alpha = 0.4;
        let op = OperatorSpec::scalar(c(-0.5, 0.2));
        let coeffs = vec![v1(1.0), v1(-2.0), v1(0.5)];
        let a = PieceFormula { terms: vec![], conv: ConvPart::polynomial(0.0, &coeffs) };
        let data = SampledForcing::continuous(
            (0..=4000).map(|j| j as f64 * 1.5 / 4000.0).collect(),
            (0..=4000).map(|j| {
                let t = j as f64 * 1.5 / 4000.0;
                v1(1.0 - 2.0 * t + 0.5 * t * t)
            }).collect(),
        );
        let b = PieceFormula { terms: vec![], conv: ConvPart::sampled(Arc::new(data), 0) };
        let x = a.value(alpha, &op, 1.5).unwrap();
        let y = b.value(alpha, &op, 1.5).unwrap();
        assert!((x - y).norm() < 1e-7);
    }

    #[test]
    fn picard_state_independent() {
        let p = example(linear(), vec![1.0]);
        let mut q = p.clone();
        q.forcing = Forcing::state(|t, _x| CVector::from_element(1, Complex64::new(t, 0.0)));
        let opts = EvalOptions { nodes_per_piece: 32 };
        let r = solve_semilinear_picard(&q, &opts, PICARD_TOL, PICARD_MAX_ITER).unwrap();
        assert_eq!(r.iterations, Some(1));
        let s = eval_sol3_with(&p, &opts).unwrap();
        for (a, b) in r.pieces.iter().zip(&s.pieces) {
            for (x, y) in a.values.iter().zip(&b.values) {
                assert!((x - y).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_bad_problems() {
        let op = OperatorSpec::scalar(c(-1.0, 0.0));
        let bad_t = ImpulsiveProblem::new(0.5, op.clone(), linear(), v1(0.0), vec![2.0], vec![ImpulseMap::constant(v1(1.0))], 2.0);
        assert!(bad_t.is_err());
        let bad_order = ImpulsiveProblem::new(0.5, op.clone(), linear(), v1(0.0), vec![1.2, 0.8], vec![ImpulseMap::constant(v1(1.0)); 2], 2.0);
        assert!(bad_order.is_err());
        let bad_dim = ImpulsiveProblem::new(0.5, op, linear(), CVector::zeros(2), vec![], vec![], 2.0);
        assert!(matches!(bad_dim, Err(Error::DimensionMismatch { .. })));
    }
}
