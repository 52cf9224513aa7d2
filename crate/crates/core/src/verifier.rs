//! Residual engine: `r(t) = D^α x(t) − (A x(t) + f(t, x(t)))` under a
//! refinement ladder, with verdicts that separate a vanishing residual from
//! one bounded away from zero.

use std::ops::RangeBounds;

use num_complex::Complex64;

use crate::caputo::{
    jump_terms, l1_eval, trajectory_caputo_at, weakly_singular_integral, CaputoKernelCache, Convention, DEFAULT_TOL,
};
use crate::error::{Error, Result};
use crate::gamma::rgamma;
use crate::mlf::{self, real_pow};
use crate::quad::QuadResult;
use crate::resolvent::{OperatorKind, OperatorSpec};
use crate::solutions::{
    eval_sol1_with, eval_sol2_with, eval_sol3_with, sup_norm, ConvPart, EvalOptions, Forcing, ImpulsiveProblem,
    KernelCache, PieceFormula, Trajectory,
};
use crate::CVector;

/// Minimum sup-norm decay per halving for a vanishing residual.
pub const DECAY_FACTOR: f64 = 1.5;
/// Signal-to-error ratio for a residual bounded away from zero.
pub const SEPARATION: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verdict {
    VanishesUnderRefinement,
    BoundedAwayFromZero,
    Inconclusive,
}

impl Verdict {
    pub fn name(self) -> &'static str {
        match self {
            Verdict::VanishesUnderRefinement => "VANISHES_UNDER_REFINEMENT",
            Verdict::BoundedAwayFromZero => "BOUNDED_AWAY_FROM_ZERO",
            Verdict::Inconclusive => "INCONCLUSIVE",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        [Verdict::VanishesUnderRefinement, Verdict::BoundedAwayFromZero, Verdict::Inconclusive]
            .into_iter()
            .find(|v| v.name() == s)
    }

    /// Common verdict of several pieces: unanimous, else inconclusive.
    pub fn combine<I: IntoIterator<Item = Verdict>>(items: I) -> Verdict {
        let mut it = items.into_iter();
        let Some(first) = it.next() else {
            return Verdict::Inconclusive;
        };
        if it.all(|v| v == first) {
            first
        } else {
            Verdict::Inconclusive
        }
    }
}

/// Lower limit of the Caputo derivative on piece k.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LowerLimit {
    Zero,
    /// `t_k`, the start of the piece.
    PieceStart,
}

impl LowerLimit {
    pub fn name(self) -> &'static str {
        match self {
            LowerLimit::Zero => "zero",
            LowerLimit::PieceStart => "piece_start",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ResidualOptions {
    /// Level-0 cells per piece; level ℓ uses `base_divisions·2^ℓ`.
    pub base_divisions: usize,
    pub levels: usize,
    /// Evaluation nodes per piece, at `t_k + j·len/eval_per_piece`.
    pub eval_per_piece: usize,
    /// Move the evaluation nodes back by half their spacing.
    pub half_step: bool,
}

impl Default for ResidualOptions {
    fn default() -> Self {
        ResidualOptions { base_divisions: 256, levels: 4, eval_per_piece: 16, half_step: false }
    }
}

impl ResidualOptions {
    fn validate(&self) -> Result<()> {
        if self.levels < 2 || self.eval_per_piece == 0 || !self.base_divisions.is_multiple_of(2 * self.eval_per_piece) {
            return Err(Error::InvalidArgument(
                "ladder needs ≥ 2 levels and base_divisions divisible by 2·eval_per_piece".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PieceResidual {
    pub piece: usize,
    pub nodes: Vec<f64>,
    /// Residuals at the finest level.
    pub residuals: Vec<CVector>,
    /// `(h, sup-norm)` per level.
    pub trace: Vec<(f64, f64)>,
    /// sup over nodes of |finest − previous level|.
    pub error_estimate: f64,
    pub noise_floor: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone)]
pub struct ResidualReport {
    pub convention: Convention,
    pub lower_limit: LowerLimit,
    pub pieces: Vec<PieceResidual>,
}

impl ResidualReport {
    pub fn verdict(&self) -> Verdict {
        Verdict::combine(self.pieces.iter().map(|p| p.verdict))
    }

    pub fn piece(&self, k: usize) -> Option<&PieceResidual> {
        self.pieces.iter().find(|p| p.piece == k)
    }

    pub fn verdict_over<R: RangeBounds<usize>>(&self, range: R) -> Verdict {
        Verdict::combine(self.pieces.iter().filter(|p| range.contains(&p.piece)).map(|p| p.verdict))
    }

    /// Per-level `(max h, max sup)` over the pieces in the report.
    pub fn trace(&self) -> Vec<(f64, f64)> {
        let levels = self.pieces.first().map_or(0, |p| p.trace.len());
        (0..levels)
            .map(|l| {
                self.pieces
                    .iter()
                    .map(|p| p.trace[l])
                    .fold((0.0_f64, 0.0_f64), |a, b| (a.0.max(b.0), a.1.max(b.1)))
            })
            .collect()
    }

    pub fn sup(&self) -> f64 {
        self.trace().last().map_or(0.0, |t| t.1)
    }

    pub fn error_estimate(&self) -> f64 {
        self.pieces.iter().map(|p| p.error_estimate).fold(0.0, f64::max)
    }
}

fn classify(sups: &[f64], error_estimate: f64, floor: f64) -> Verdict {
    let vanishes = sups.windows(2).all(|w| w[1] <= floor || w[0] >= DECAY_FACTOR * w[1]);
    if vanishes {
        return Verdict::VanishesUnderRefinement;
    }
    let smallest = sups.iter().copied().fold(f64::INFINITY, f64::min);
    if smallest > floor && smallest >= SEPARATION * error_estimate {
        Verdict::BoundedAwayFromZero
    } else {
        Verdict::Inconclusive
    }
}

/// Piecewise formulas on `[breaks[0], breaks[last]]` with the data needed
/// for a residual.
struct Segmented<'a> {
    alpha: f64,
    op: &'a OperatorSpec,
    forcing: &'a Forcing,
    breaks: Vec<f64>,
    formulas: Vec<&'a PieceFormula>,
}

impl Segmented<'_> {
    fn ladder(&self, convention: Convention, lower: LowerLimit, pieces: &[usize], opts: &ResidualOptions) -> Result<ResidualReport> {
        opts.validate()?;
        let mut out = Vec::with_capacity(pieces.len());
        for &k in pieces {
            if k + 1 >= self.breaks.len() {
                return Err(Error::InvalidArgument(format!("no piece {k}")));
            }
            out.push(self.piece_ladder(convention, lower, k, opts)?);
        }
        Ok(ResidualReport { convention, lower_limit: lower, pieces: out })
    }

    fn piece_ladder(&self, convention: Convention, lower: LowerLimit, k: usize, opts: &ResidualOptions) -> Result<PieceResidual> {
        let b = &self.breaks;
        let first = match lower {
            LowerLimit::Zero => 0,
            LowerLimit::PieceStart => k,
        };
        let own = convention == Convention::FormulaExtension || first == k;
        let mut level_res: Vec<Vec<CVector>> = Vec::with_capacity(opts.levels);
        let mut trace = Vec::with_capacity(opts.levels);
        let mut eval_nodes = Vec::new();
        let mut scale: f64 = 0.0;
        for level in 0..opts.levels {
            let cells = opts.base_divisions << level;
            let mut cache = KernelCache::new(self.alpha, self.op, b[k + 1]);
            let (mut nodes, mut left, mut right) = (Vec::new(), Vec::new(), Vec::new());
            let mut offset = 0;
            for j in first..=k {
                let formula = if own { self.formulas[k] } else { self.formulas[j] };
                let h = (b[j + 1] - b[j]) / cells as f64;
                if j == k {
                    offset = nodes.len().saturating_sub(1);
                }
                for i in 0..=cells {
                    let s = if i == cells { b[j + 1] } else { b[j] + i as f64 * h };
                    let v = formula.value_cached(self.alpha, self.op, s, &mut cache)?;
                    if i == 0 && j > first {
                        // node already present as the end of segment j−1
                        *right.last_mut().expect("previous segment") = v;
                    } else {
                        nodes.push(s);
                        left.push(v.clone());
                        right.push(v);
                    }
                }
            }
            if k == first {
                offset = 0;
            }
            let step = cells / opts.eval_per_piece;
            let mut res = Vec::with_capacity(opts.eval_per_piece);
            eval_nodes.clear();
            for e in 1..=opts.eval_per_piece {
                let idx = if opts.half_step { offset + e * step - step / 2 } else { offset + e * step };
                let t = nodes[idx];
                let mut d = l1_eval(&nodes, &left, &right, idx, self.alpha);
                if convention == Convention::JumpInclusive {
                    d += jump_terms(&nodes, &left, &right, idx, self.alpha);
                }
                let x = &left[idx];
                let ax = self.op.apply(x);
                let f = self.forcing.eval(t, x);
                scale = scale.max(sup_norm(x)).max(sup_norm(&ax)).max(sup_norm(&f));
                res.push(d - ax - f);
                eval_nodes.push(t);
            }
            let sup = res.iter().map(sup_norm).fold(0.0, f64::max);
            let hmax = (first..=k).map(|j| (b[j + 1] - b[j]) / cells as f64).fold(0.0, f64::max);
            trace.push((hmax, sup));
            level_res.push(res);
        }
        let n = level_res.len();
        let error_estimate = level_res[n - 1]
            .iter()
            .zip(&level_res[n - 2])
            .map(|(a, b)| sup_norm(&(a - b)))
            .fold(0.0, f64::max);
        let noise_floor = 1e-12 * (1.0 + scale);
        let sups: Vec<f64> = trace.iter().map(|t| t.1).collect();
        let verdict = classify(&sups, error_estimate, noise_floor);
        Ok(PieceResidual {
            piece: k,
            nodes: eval_nodes,
            residuals: level_res.pop().expect("levels ≥ 2"),
            trace,
            error_estimate,
            noise_floor,
            verdict,
        })
    }
}

fn segmented<'a>(problem: &'a ImpulsiveProblem, traj: &'a Trajectory) -> Segmented<'a> {
    Segmented {
        alpha: traj.alpha,
        op: &traj.op,
        forcing: &problem.forcing,
        breaks: problem.breakpoints(),
        formulas: traj.pieces.iter().map(|p| &p.formula).collect(),
    }
}

/// Residual ladder over every piece, lower limit 0.
pub fn residual(problem: &ImpulsiveProblem, traj: &Trajectory, convention: Convention, opts: &ResidualOptions) -> Result<ResidualReport> {
    residual_with(problem, traj, convention, LowerLimit::Zero, None, opts)
}

/// Residual ladder on selected pieces with a chosen lower limit.
///
/// Each level samples the relevant formulas on per-piece uniform grids with
/// impulse times as nodes and applies the L1 scheme at fixed evaluation
/// nodes. FORMULA_EXTENSION (and any per-piece lower limit) uses piece k's
/// own formula on the whole grid.
pub fn residual_with(
    problem: &ImpulsiveProblem,
    traj: &Trajectory,
    convention: Convention,
    lower: LowerLimit,
    pieces: Option<&[usize]>,
    opts: &ResidualOptions,
) -> Result<ResidualReport> {
    if traj.pieces.len() != problem.piece_count() {
        return Err(Error::InvalidArgument("trajectory does not match the problem".into()));
    }
    let all: Vec<usize> = (0..traj.pieces.len()).collect();
    segmented(problem, traj).ladder(convention, lower, pieces.unwrap_or(&all), opts)
}

#[derive(Debug, Clone)]
pub struct NodeResidual {
    pub t: f64,
    pub piece: usize,
    pub residual: CVector,
    /// Quadrature error estimate of the derivative.
    pub error: f64,
}

/// Residuals at given nodes with the derivative taken by adaptive
/// quadrature instead of the L1 ladder.
pub fn residual_at_nodes(
    problem: &ImpulsiveProblem,
    traj: &Trajectory,
    convention: Convention,
    lower: LowerLimit,
    nodes: &[f64],
    tol: f64,
) -> Result<Vec<NodeResidual>> {
    let mut kernels = CaputoKernelCache::new(traj.alpha, &traj.op, problem.horizon, tol);
    let b = problem.breakpoints();
    nodes
        .iter()
        .map(|&t| {
            if !(t > 0.0 && t <= problem.horizon) {
                return Err(Error::InvalidArgument(format!("node {t} outside (0, T]")));
            }
            let k = traj.piece_index(t);
            let a = match lower {
                LowerLimit::Zero => 0.0,
                LowerLimit::PieceStart => b[k],
            };
            let d = trajectory_caputo_at(traj, convention, a, t, tol, &mut kernels)?;
            let x = traj.pieces[k].formula.value(traj.alpha, &traj.op, t)?;
            let r = d.value - traj.op.apply(&x) - problem.forcing.eval(t, &x);
            Ok(NodeResidual { t, piece: k, residual: r, error: d.error })
        })
        .collect()
}

/// The two resolvent identities: `D^α[S_α(t)x_0] = A S_α(t)x_0` and
/// `D^α ∫_0^t T_α(t−θ)f dθ = A ∫_0^t T_α(t−θ)f dθ + f(t)`.
#[derive(Debug, Clone)]
pub struct ResolventIdentityReport {
    pub homogeneous: ResidualReport,
    pub convolution: ResidualReport,
}

/// Checks both identities on `[0, horizon]` for polynomial `f`.
pub fn check_resolvent_identities(
    alpha: f64,
    op: &OperatorSpec,
    x0: &CVector,
    forcing: &[CVector],
    horizon: f64,
    opts: &ResidualOptions,
) -> Result<ResolventIdentityReport> {
    let n = op.dim();
    if x0.len() != n || forcing.iter().any(|c| c.len() != n) || forcing.is_empty() {
        return Err(Error::DimensionMismatch { expected: n, found: x0.len() });
    }
    let hom = PieceFormula { terms: vec![(0.0, x0.clone())], conv: ConvPart::None };
    let conv = PieceFormula { terms: vec![], conv: ConvPart::polynomial(0.0, forcing) };
    let zero = Forcing::zero(n);
    let f = Forcing::Polynomial(forcing.to_vec());
    let sys = |formula, forcing| Segmented { alpha, op, forcing, breaks: vec![0.0, horizon], formulas: vec![formula] };
    Ok(ResolventIdentityReport {
        homogeneous: sys(&hom, &zero).ladder(Convention::FormulaExtension, LowerLimit::Zero, &[0], opts)?,
        convolution: sys(&conv, &f).ladder(Convention::FormulaExtension, LowerLimit::Zero, &[0], opts)?,
    })
}

/// `S_α(t − t_i)y` on `(t_i, T]` differentiated from `t_i` and from 0.
#[derive(Debug, Clone)]
pub struct ShiftedOriginReport {
    pub shifted: ResidualReport,
    pub from_zero: ResidualReport,
}

pub fn check_shifted_origin(alpha: f64, op: &OperatorSpec, t_i: f64, y: &CVector, horizon: f64, opts: &ResidualOptions) -> Result<ShiftedOriginReport> {
    if !(t_i > 0.0 && t_i < horizon) {
        return Err(Error::InvalidArgument(format!("need 0 < t_i < T, got {t_i}")));
    }
    if y.len() != op.dim() {
        return Err(Error::DimensionMismatch { expected: op.dim(), found: y.len() });
    }
    let formula = PieceFormula { terms: vec![(t_i, y.clone())], conv: ConvPart::None };
    let zero = Forcing::zero(op.dim());
    let sys = Segmented { alpha, op, forcing: &zero, breaks: vec![0.0, t_i, horizon], formulas: vec![&formula, &formula] };
    Ok(ShiftedOriginReport {
        shifted: sys.ladder(Convention::FormulaExtension, LowerLimit::PieceStart, &[1], opts)?,
        from_zero: sys.ladder(Convention::FormulaExtension, LowerLimit::Zero, &[1], opts)?,
    })
}

/// Both sides of a claimed non-identity at a set of nodes.
#[derive(Debug, Clone)]
pub struct NonIdentity {
    pub label: String,
    pub nodes: Vec<f64>,
    pub lhs: Vec<CVector>,
    pub rhs: Vec<CVector>,
    pub gap: Vec<f64>,
    /// Quadrature error estimate of the left side.
    pub error: Vec<f64>,
}

impl NonIdentity {
    /// Every gap is at least ten times its quadrature error.
    pub fn separated(&self) -> bool {
        self.gap.iter().zip(&self.error).all(|(g, e)| *g > 0.0 && *g >= SEPARATION * e)
    }
}

/// Restarted terms differentiated from 0 instead of `t_i`:
/// `_0D^α ∫_{t_i}^t T_α(t−θ)f dθ` against `A ∫_{t_i}^t T_α(t−θ)f dθ + f(t)`, and
/// `_0D^α S_α(t−t_i)y` against `A S_α(t−t_i)y`. A scalar operator gives the
/// Mittag-Leffler forms, a matrix the operator forms.
pub fn demo_restart_mismatch(
    alpha: f64,
    op: &OperatorSpec,
    t_i: f64,
    y: &CVector,
    forcing: &[CVector],
    nodes: &[f64],
    tol: f64,
) -> Result<Vec<NonIdentity>> {
    if nodes.iter().any(|&t| !(t > t_i)) {
        return Err(Error::InvalidArgument("nodes must lie above t_i".into()));
    }
    let kind = match op.kind() {
        OperatorKind::Scalar(_) => "scalar",
        OperatorKind::Matrix(_) => "operator",
    };
    let conv = PieceFormula { terms: vec![], conv: ConvPart::polynomial(t_i, forcing) };
    let imp = PieceFormula { terms: vec![(t_i, y.clone())], conv: ConvPart::None };
    let f = Forcing::Polynomial(forcing.to_vec());
    let zero = Forcing::zero(op.dim());
    let mut kernels = CaputoKernelCache::new(alpha, op, 1.0, tol);
    let mut out = Vec::new();
    for (label, formula, forcing) in [("restarted convolution", &conv, &f), ("restarted impulse", &imp, &zero)] {
        let mut entry = NonIdentity {
            label: format!("{label} ({kind})"),
            nodes: nodes.to_vec(),
            lhs: Vec::new(),
            rhs: Vec::new(),
            gap: Vec::new(),
            error: Vec::new(),
        };
        for &t in nodes {
            let d = crate::caputo::formula_caputo(formula, alpha, op, 0.0, t, tol, &mut kernels)?;
            let x = formula.value(alpha, op, t)?;
            let rhs = op.apply(&x) + forcing.eval(t, &x);
            entry.gap.push(sup_norm(&(&d.value - &rhs)));
            entry.error.push(d.error);
            entry.lhs.push(d.value);
            entry.rhs.push(rhs);
        }
        out.push(entry);
    }
    Ok(out)
}

/// Residual of the restarted formula with per-piece lower limits `t_k`.
pub fn check_restart_residual(problem: &ImpulsiveProblem, traj: &Trajectory, opts: &ResidualOptions) -> Result<ResidualReport> {
    if !problem.forcing.is_pure_time() {
        return Err(Error::InvalidArgument("restart check needs pure-time forcing".into()));
    }
    residual_with(problem, traj, Convention::FormulaExtension, LowerLimit::PieceStart, None, opts)
}

#[derive(Debug, Clone)]
pub struct FormulaReport {
    pub sol1: ResidualReport,
    pub sol2: ResidualReport,
    pub sol3: ResidualReport,
    pub impulses: usize,
}

impl FormulaReport {
    /// Verdicts on the pieces after the first impulse (all pieces when
    /// there are no impulses).
    pub fn verdicts(&self) -> [Verdict; 3] {
        let from = usize::from(self.impulses > 0);
        [self.sol1.verdict_over(from..), self.sol2.verdict_over(from..), self.sol3.verdict()]
    }

    /// sol1 and sol2 fail after an impulse while sol3 holds everywhere; with
    /// no impulses all three hold.
    pub fn pattern_holds(&self) -> bool {
        use Verdict::*;
        let v = self.verdicts();
        if self.impulses == 0 {
            v == [VanishesUnderRefinement; 3]
        } else {
            v == [BoundedAwayFromZero, BoundedAwayFromZero, VanishesUnderRefinement]
        }
    }
}

/// FORMULA_EXTENSION residuals of all three formulas.
pub fn verify_solution_formulas(problem: &ImpulsiveProblem, eval: &EvalOptions, opts: &ResidualOptions) -> Result<FormulaReport> {
    let c = Convention::FormulaExtension;
    let sol1 = residual(problem, &eval_sol1_with(problem, eval)?, c, opts)?;
    let sol2 = residual(problem, &eval_sol2_with(problem, eval)?, c, opts)?;
    let sol3 = residual(problem, &eval_sol3_with(problem, eval)?, c, opts)?;
    Ok(FormulaReport { sol1, sol2, sol3, impulses: problem.impulse_times.len() })
}

/// The two integrals over `[0, t_1]` behind F and G, sharing one quadrature:
/// `∫ k(t−s) d/ds E_{α,1}(ρu^α) ds` and `∫ k(t−s) d/ds ∫_{t_1}^s T_α(s−θ)θ dθ ds`
/// with `u = s − t_1 < 0` on the principal branch and `k(τ) = τ^{−α}/Γ(1−α)`.
fn restart_integrals(rho: Complex64, alpha: f64, t1: f64, t: f64, tol: f64) -> Result<QuadResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("fractional order {alpha} not in (0, 1)")));
    }
    if !(t1 > 0.0 && t > t1) {
        return Err(Error::InvalidArgument(format!("need 0 < t_1 < t, got {t1}, {t}")));
    }
    let failure = std::cell::RefCell::new(None);
    let ml = |beta: f64, z: Complex64| match mlf::eval_unchecked(alpha, beta, mlf::DEFAULT_TOL, z) {
        Ok(v) => v,
        Err(e) => {
            failure.borrow_mut().get_or_insert(e);
            Complex64::new(0.0, 0.0)
        }
    };
    let df = |s: f64| {
        let u = s - t1;
        let z = rho * real_pow(u, alpha);
        let ea = ml(alpha, z);
        let du = real_pow(u, alpha - 1.0);
        // d/ds E_{α,1}(ρu^α) = ρ u^{α−1} E_{α,α}(ρu^α)
        let first = rho * du * ea;
        // inner(s) = t_1 u^α E_{α,α+1} + u^{α+1} E_{α,α+2}
        let second = t1 * du * ea + real_pow(u, alpha) * ml(alpha + 1.0, z);
        CVector::from_vec(vec![first, second])
    };
    let scale = rgamma(1.0 - alpha);
    let r = weakly_singular_integral(&df, 2, 0.0, t1, t, alpha, &[], tol / scale);
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    let r = r?;
    Ok(QuadResult { value: r.value * Complex64::new(scale, 0.0), error: r.error * scale, panels: r.panels })
}

/// F(t): the FORMULA_EXTENSION residual of the restarted formula on
/// `(t_1, T]` for `D^α x = ρx + t` with one impulse `y_1` at `t_1`.
/// Returns the value and its quadrature error estimate.
pub fn residual_f(rho: Complex64, alpha: f64, t1: f64, x_t1_minus: Complex64, y1: Complex64, t: f64, tol: f64) -> Result<(Complex64, f64)> {
    let r = restart_integrals(rho, alpha, t1, t, tol)?;
    let c = x_t1_minus + y1;
    Ok((c * r.value[0] + r.value[1], r.error * (1.0 + c.norm())))
}

/// G(t): the same residual for the global formula with impulse term
/// `S_α(t − t_1)y_1`.
pub fn residual_g(rho: Complex64, alpha: f64, t1: f64, y1: Complex64, t: f64, tol: f64) -> Result<(Complex64, f64)> {
    let r = restart_integrals(rho, alpha, t1, t, tol)?;
    Ok((y1 * r.value[0], r.error * y1.norm()))
}

/// Default tolerance of the quadrature-based checks.
pub const QUAD_TOL: f64 = DEFAULT_TOL;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solutions::ImpulseMap;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn v1(re: f64) -> CVector {
        CVector::from_element(1, c(re))
    }

    fn example(times: Vec<f64>) -> ImpulsiveProblem {
        let maps = times.iter().map(|_| ImpulseMap::constant(v1(1.0))).collect();
        let f = Forcing::Polynomial(vec![v1(0.0), v1(1.0)]);
        ImpulsiveProblem::new(2.0 / 3.0, OperatorSpec::scalar(c(-1.0)), f, v1(0.5), times, maps, 2.0).unwrap()
    }

    const EVAL: EvalOptions = EvalOptions { nodes_per_piece: 16 };

    #[test]
    fn verdict_names_round_trip() {
        for v in [Verdict::VanishesUnderRefinement, Verdict::BoundedAwayFromZero, Verdict::Inconclusive] {
            assert_eq!(Verdict::from_name(v.name()), Some(v));
        }
        assert_eq!(Verdict::combine([]), Verdict::Inconclusive);
    }

    #[test]
    fn classify_rules() {
        assert_eq!(classify(&[1e-3, 5e-4, 2e-4], 1e-4, 1e-12), Verdict::VanishesUnderRefinement);
        assert_eq!(classify(&[1e-3, 1e-13, 1e-13], 0.0, 1e-12), Verdict::VanishesUnderRefinement);
        assert_eq!(classify(&[0.3, 0.3, 0.3], 1e-4, 1e-12), Verdict::BoundedAwayFromZero);
        assert_eq!(classify(&[0.3, 0.3, 0.3], 0.1, 1e-12), Verdict::Inconclusive);
    }

    #[test]
    fn impulse_pattern() {
        let r = verify_solution_formulas(&example(vec![1.0]), &EVAL, &ResidualOptions::default()).unwrap();
        assert_eq!(r.sol3.verdict(), Verdict::VanishesUnderRefinement, "{:?}", r.sol3.trace());
        assert_eq!(r.sol1.piece(0).unwrap().verdict, Verdict::VanishesUnderRefinement);
        assert!(r.pattern_holds(), "{:?}", r.verdicts());
    }

    #[test]
    fn no_impulse_pattern() {
        let r = verify_solution_formulas(&example(vec![]), &EVAL, &ResidualOptions::default()).unwrap();
        assert!(r.pattern_holds(), "{:?}", r.verdicts());
    }

    #[test]
    fn residual_f_matches_sol1_residual() {
        let p = example(vec![1.0]);
        let traj = eval_sol1_with(&p, &EVAL).unwrap();
        let xm = traj.left[0][0];
        let nodes = [1.25, 1.5, 2.0];
        let res = residual_at_nodes(&p, &traj, Convention::FormulaExtension, LowerLimit::Zero, &nodes, 1e-10).unwrap();
        for r in res {
            let (f, err) = residual_f(c(-1.0), 2.0 / 3.0, 1.0, xm, c(1.0), r.t, 1e-11).unwrap();
            assert!((f - r.residual[0]).norm() < 1e-8, "t={} F={f} r={}", r.t, r.residual[0]);
            assert!(f.norm() > 10.0 * (err + r.error));
        }
    }

    #[test]
    fn residual_g_is_impulse_term_defect() {
        // G is what the impulse term alone contributes
        let (alpha, t1, y) = (0.5, 1.0, v1(1.0));
        let op = OperatorSpec::scalar(c(-1.0));
        let d = demo_restart_mismatch(alpha, &op, t1, &y, &[v1(0.0), v1(1.0)], &[1.5], 1e-11).unwrap();
        let imp = &d[1];
        let (g, _) = residual_g(c(-1.0), alpha, t1, c(1.0), 1.5, 1e-11).unwrap();
        assert!((g - (&imp.lhs[0] - &imp.rhs[0])[0]).norm() < 1e-8);
        assert!(d.iter().all(NonIdentity::separated));
    }

    #[test]
    fn resolvent_identities_vanish() {
        let op = OperatorSpec::matrix(crate::CMatrix::from_row_slice(2, 2, &[c(-1.0), c(0.5), c(0.0), c(-2.0)])).unwrap();
        let x0 = CVector::from_vec(vec![c(1.0), c(-1.0)]);
        let f = [CVector::from_vec(vec![c(1.0), c(0.0)]), CVector::from_vec(vec![c(0.0), c(1.0)])];
        let r = check_resolvent_identities(0.6, &op, &x0, &f, 1.0, &ResidualOptions::default()).unwrap();
        assert_eq!(r.homogeneous.verdict(), Verdict::VanishesUnderRefinement, "{:?}", r.homogeneous.trace());
        assert_eq!(r.convolution.verdict(), Verdict::VanishesUnderRefinement, "{:?}", r.convolution.trace());
    }

    #[test]
    fn shifted_lower_limit_matters() {
        let op = OperatorSpec::scalar(c(-1.0));
        let r = check_shifted_origin(0.5, &op, 1.0, &v1(1.0), 2.0, &ResidualOptions::default()).unwrap();
        assert_eq!(r.shifted.verdict(), Verdict::VanishesUnderRefinement, "{:?}", r.shifted.trace());
        assert_eq!(r.from_zero.verdict(), Verdict::BoundedAwayFromZero, "{:?}", r.from_zero.trace());
    }

    #[test]
    fn restart_residual_vanishes() {
        let p = example(vec![1.0]);
        let r = check_restart_residual(&p, &eval_sol1_with(&p, &EVAL).unwrap(), &ResidualOptions::default()).unwrap();
        assert_eq!(r.verdict(), Verdict::VanishesUnderRefinement, "{:?}", r.trace());
        let r = check_restart_residual(&p, &eval_sol3_with(&p, &EVAL).unwrap(), &ResidualOptions::default()).unwrap();
        assert_eq!(r.piece(1).unwrap().verdict, Verdict::BoundedAwayFromZero);
    }

    #[test]
    fn classical_convention_on_sol3() {
        let p = example(vec![1.0]);
        let traj = eval_sol3_with(&p, &EVAL).unwrap();
        let r = residual(&p, &traj, Convention::PiecewiseClassical, &ResidualOptions::default()).unwrap();
        // sol3 piece 1 restarts; under the classical convention the earlier
        // piece's memory stays in the derivative
        assert_eq!(r.piece(0).unwrap().verdict, Verdict::VanishesUnderRefinement);
    }

    #[test]
    fn half_step_rotation() {
        let p = example(vec![1.0]);
        let traj = eval_sol3_with(&p, &EVAL).unwrap();
        let opts = ResidualOptions { half_step: true, ..Default::default() };
        let r = residual(&p, &traj, Convention::FormulaExtension, &opts).unwrap();
        assert_eq!(r.verdict(), Verdict::VanishesUnderRefinement);
        assert!(r.pieces[0].nodes[0] > 0.0 && r.pieces[0].nodes[0] < 1.0 / 16.0 + 1e-12);
    }

    #[test]
    fn bad_options() {
        let p = example(vec![]);
        let traj = eval_sol3_with(&p, &EVAL).unwrap();
        let opts = ResidualOptions { base_divisions: 30, ..Default::default() };
        assert!(residual(&p, &traj, Convention::FormulaExtension, &opts).is_err());
    }
}
