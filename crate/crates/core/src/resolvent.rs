//! α-resolvent families generated by a finite-dimensional operator.
//!
//! `S_α(t) = E_{α,1}(A t^α)` and `T_α(t) = t^{α−1} E_{α,α}(A t^α)`. Matrix
//! functions go through the eigendecomposition when the eigenvector basis is
//! well conditioned, and through the truncated operator series otherwise.

use std::f64::consts::PI;

use nalgebra::{Schur, SVD};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::gamma::{ln_gamma, rgamma};
use crate::mlf::{self, real_pow};
use crate::{CMatrix, CVector};

/// Eigenvector condition number above which the spectral path is abandoned.
pub const SPECTRAL_CONDITION_LIMIT: f64 = 1e8;
/// Condition estimate above which `S_α(t_i)` is declared singular.
pub const SINGULAR_CONDITION_LIMIT: f64 = 1e12;

const SERIES_TAIL: f64 = 1e-14;
const SERIES_MAX_TERMS: usize = 2000;

/// Cached eigendecomposition `A = V·diag(λ)·V⁻¹`.
#[derive(Debug, Clone)]
pub struct Spectral {
    pub eigenvalues: Vec<Complex64>,
    pub vectors: CMatrix,
    pub inverse: CMatrix,
    pub condition: f64,
}

#[derive(Debug, Clone)]
pub enum OperatorKind {
    Scalar(Complex64),
    Matrix(CMatrix),
}

/// The generator `A`: a complex scalar or a square complex matrix.
#[derive(Debug, Clone)]
pub struct OperatorSpec {
    kind: OperatorKind,
    spectral: Option<Spectral>,
}

/// Route used to evaluate a matrix function.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixPath {
    /// Spectral when available, otherwise series.
    Auto,
    Spectral,
    Series,
}

impl OperatorSpec {
    pub fn scalar(rho: Complex64) -> Self {
        OperatorSpec { kind: OperatorKind::Scalar(rho), spectral: None }
    }

    pub fn matrix(a: CMatrix) -> Result<Self> {
        if a.nrows() != a.ncols() || a.nrows() == 0 {
            return Err(Error::InvalidArgument(format!(
                "operator matrix must be square and non-empty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if a.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::InvalidArgument("operator matrix has non-finite entries".into()));
        }
        let spectral = spectral_decomposition(&a);
        Ok(OperatorSpec { kind: OperatorKind::Matrix(a), spectral })
    }

    pub fn diagonal(entries: &[Complex64]) -> Result<Self> {
        Self::matrix(CMatrix::from_diagonal(&CVector::from_column_slice(entries)))
    }

    pub fn zero(dim: usize) -> Self {
        if dim == 1 {
            return Self::scalar(Complex64::new(0.0, 0.0));
        }
        Self::matrix(CMatrix::zeros(dim, dim)).expect("zero matrix is valid")
    }

    pub fn kind(&self) -> &OperatorKind {
        &self.kind
    }

    pub fn spectral(&self) -> Option<&Spectral> {
        self.spectral.as_ref()
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            OperatorKind::Scalar(_) => 1,
            OperatorKind::Matrix(a) => a.nrows(),
        }
    }

    pub fn as_matrix(&self) -> CMatrix {
        match &self.kind {
            OperatorKind::Scalar(r) => CMatrix::from_element(1, 1, *r),
            OperatorKind::Matrix(a) => a.clone(),
        }
    }

    /// Frobenius norm, an upper bound for the spectral norm.
    pub fn norm(&self) -> f64 {
        match &self.kind {
            OperatorKind::Scalar(r) => r.norm(),
            OperatorKind::Matrix(a) => a.norm(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.norm() == 0.0
    }

    pub fn apply(&self, x: &CVector) -> CVector {
        match &self.kind {
            OperatorKind::Scalar(r) => x * *r,
            OperatorKind::Matrix(a) => a * x,
        }
    }

    pub fn eigenvalues(&self) -> Vec<Complex64> {
        match (&self.kind, &self.spectral) {
            (OperatorKind::Scalar(r), _) => vec![*r],
            (_, Some(s)) => s.eigenvalues.clone(),
            (OperatorKind::Matrix(a), None) => {
                let (_, t) = Schur::new(a.clone()).unpack();
                t.diagonal().iter().copied().collect()
            }
        }
    }

    /// `E_{α,β}(A·c)` for a complex multiplier `c`.
    pub fn ml_matrix(&self, alpha: f64, beta: f64, c: Complex64) -> Result<CMatrix> {
        self.ml_matrix_with(alpha, beta, c, MatrixPath::Auto)
    }

    pub fn ml_matrix_with(&self, alpha: f64, beta: f64, c: Complex64, path: MatrixPath) -> Result<CMatrix> {
        let tol = mlf::DEFAULT_TOL;
        match &self.kind {
            OperatorKind::Scalar(r) => {
                let v = mlf::eval_unchecked(alpha, beta, tol, *r * c)?;
                Ok(CMatrix::from_element(1, 1, v))
            }
            OperatorKind::Matrix(a) => match (path, &self.spectral) {
                (MatrixPath::Series, _) | (MatrixPath::Auto, None) => operator_series(a, alpha, beta, c),
                (MatrixPath::Spectral, None) => Err(Error::InvalidArgument(
                    "operator has no usable eigendecomposition".into(),
                )),
                (_, Some(s)) => {
                    let mut scaled = s.vectors.clone();
                    for (j, lambda) in s.eigenvalues.iter().enumerate() {
                        let f = mlf::eval_unchecked(alpha, beta, tol, *lambda * c)?;
                        for v in scaled.column_mut(j).iter_mut() {
                            *v *= f;
                        }
                    }
                    Ok(scaled * &s.inverse)
                }
            },
        }
    }

    /// `E_{α,β}(A·c)·v` without forming the matrix in the scalar case.
    pub fn ml_apply(&self, alpha: f64, beta: f64, c: Complex64, v: &CVector) -> Result<CVector> {
        match &self.kind {
            OperatorKind::Scalar(r) => {
                let f = mlf::eval_unchecked(alpha, beta, mlf::DEFAULT_TOL, *r * c)?;
                Ok(v * f)
            }
            OperatorKind::Matrix(_) => Ok(self.ml_matrix(alpha, beta, c)? * v),
        }
    }
}

fn spectral_decomposition(a: &CMatrix) -> Option<Spectral> {
    let n = a.nrows();
    let (q, t) = Schur::try_new(a.clone(), f64::EPSILON, 10_000)?.unpack();
    let scale = 1.0 + a.norm();
    // eigenvectors of the triangular factor by back substitution
    let mut y = CMatrix::zeros(n, n);
    for k in 0..n {
        y[(k, k)] = Complex64::new(1.0, 0.0);
        for i in (0..k).rev() {
            let mut num = Complex64::new(0.0, 0.0);
            for j in (i + 1)..=k {
                num += t[(i, j)] * y[(j, k)];
            }
            let den = t[(i, i)] - t[(k, k)];
            if den.norm() <= 1e-13 * scale {
                if num.norm() <= 1e-12 * scale {
                    y[(i, k)] = Complex64::new(0.0, 0.0);
                    continue;
                }
                // defective (Jordan block)
                return None;
            }
            y[(i, k)] = -num / den;
        }
        let norm = y.column(k).norm();
        y.column_mut(k).unscale_mut(norm);
    }
    let vectors = q * y;
    let inverse = vectors.clone().try_inverse()?;
    let condition = vectors.norm() * inverse.norm();
    if !(condition < SPECTRAL_CONDITION_LIMIT) {
        return None;
    }
    let eigenvalues: Vec<Complex64> = t.diagonal().iter().copied().collect();
    let d = CMatrix::from_diagonal(&CVector::from_column_slice(&eigenvalues));
    let rebuilt = &vectors * d * &inverse;
    if (rebuilt - a).norm() > 1e-10 * (1.0 + a.norm()) {
        return None;
    }
    Some(Spectral { eigenvalues, vectors, inverse, condition })
}

/// Σ_k (A c)^k / Γ(αk + β) with a norm-based tail bound.
fn operator_series(a: &CMatrix, alpha: f64, beta: f64, c: Complex64) -> Result<CMatrix> {
    let n = a.nrows();
    let b = a * c;
    let b_norm = b.norm();
    let mut sum = CMatrix::identity(n, n) * Complex64::new(rgamma(beta), 0.0);
    if b_norm == 0.0 {
        return Ok(sum);
    }
    let mut power = CMatrix::identity(n, n);
    let mut bound_sum = rgamma(beta);
    for k in 1..SERIES_MAX_TERMS {
        let arg = alpha * k as f64 + beta;
        power = &power * &b;
        let coeff = rgamma(arg);
        if coeff == 0.0 && arg > 171.0 {
            let ln_bound = k as f64 * b_norm.ln() - ln_gamma(arg);
            if ln_bound < -60.0 {
                return finish_series(sum, bound_sum, b_norm);
            }
            return Err(Error::SeriesDivergence { norm: b_norm });
        }
        sum += &power * Complex64::new(coeff, 0.0);
        let term_bound = b_norm.powi(k as i32) * coeff;
        bound_sum += term_bound;
        let ratio = b_norm * (ln_gamma(arg) - ln_gamma(arg + alpha)).exp();
        if ratio < 1.0 {
            let tail = term_bound * ratio / (1.0 - ratio);
            if tail <= SERIES_TAIL {
                return finish_series(sum, bound_sum, b_norm);
            }
        }
    }
    Err(Error::SeriesDivergence { norm: b_norm })
}

fn finish_series(sum: CMatrix, bound_sum: f64, b_norm: f64) -> Result<CMatrix> {
    // rounding in the partial sums is bounded by ε·Σ‖B‖^k/Γ
    if f64::EPSILON * bound_sum > 1e-11 * sum.norm().max(1.0) {
        return Err(Error::SeriesDivergence { norm: b_norm });
    }
    Ok(sum)
}

fn check_order(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("fractional order {alpha} not in (0, 1]")))
    }
}

/// `S_α(t) = E_{α,1}(A t^α)`; `S_α(0)` is the identity.
pub fn s_alpha(alpha: f64, op: &OperatorSpec, t: f64) -> Result<CMatrix> {
    check_order(alpha)?;
    if !(t >= 0.0) {
        return Err(Error::InvalidArgument(format!("time {t} must be non-negative")));
    }
    if t == 0.0 {
        return Ok(CMatrix::identity(op.dim(), op.dim()));
    }
    op.ml_matrix(alpha, 1.0, Complex64::new(t.powf(alpha), 0.0))
}

/// `T_α(t) = t^{α−1} E_{α,α}(A t^α)` for t > 0.
pub fn t_alpha(alpha: f64, op: &OperatorSpec, t: f64) -> Result<CMatrix> {
    check_order(alpha)?;
    if t == 0.0 {
        return Err(Error::SingularTime);
    }
    if !(t > 0.0) {
        return Err(Error::InvalidArgument(format!("time {t} must be positive")));
    }
    let e = op.ml_matrix(alpha, alpha, Complex64::new(t.powf(alpha), 0.0))?;
    Ok(e * Complex64::new(t.powf(alpha - 1.0), 0.0))
}

/// `S_α(u)·v` for a real `u` of either sign, with `u^α` on the principal
/// branch. Used when a piece formula is continued past its own origin.
pub fn s_alpha_apply_signed(alpha: f64, op: &OperatorSpec, u: f64, v: &CVector) -> Result<CVector> {
    if u == 0.0 {
        return Ok(v.clone());
    }
    op.ml_apply(alpha, 1.0, real_pow(u, alpha), v)
}

/// `S_α(t_i)⁻¹`.
pub fn s_alpha_inverse(alpha: f64, op: &OperatorSpec, t_i: f64) -> Result<CMatrix> {
    if !(t_i > 0.0) {
        return Err(Error::InvalidArgument(format!("impulse time {t_i} must be positive")));
    }
    let s = s_alpha(alpha, op, t_i)?;
    if let OperatorKind::Scalar(_) = op.kind {
        let v = s[(0, 0)];
        if v.norm() < 1e-13 {
            return Err(Error::NumericallySingular { condition: f64::INFINITY });
        }
        return Ok(CMatrix::from_element(1, 1, Complex64::new(1.0, 0.0) / v));
    }
    let inv = s
        .clone()
        .try_inverse()
        .ok_or(Error::NumericallySingular { condition: f64::INFINITY })?;
    let condition = norm_one(&s) * norm_one(&inv);
    if !(condition <= SINGULAR_CONDITION_LIMIT) {
        return Err(Error::NumericallySingular { condition });
    }
    Ok(inv)
}

fn norm_one(m: &CMatrix) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// (M, θ, μ) of a sectorial operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SectorParams {
    pub m: f64,
    pub theta: f64,
    pub mu: f64,
}

impl SectorParams {
    pub fn new(m: f64, theta: f64, mu: f64) -> Result<Self> {
        if !(m > 0.0) {
            return Err(Error::InvalidArgument("M must be positive".into()));
        }
        if !(theta > 0.0 && theta < PI / 2.0) {
            return Err(Error::InvalidArgument("theta must lie in (0, pi/2)".into()));
        }
        Ok(SectorParams { m, theta, mu })
    }
}

#[derive(Debug, Clone)]
pub struct EigenSector {
    pub eigenvalue: Complex64,
    /// λ lies in μ + S_θ, where the resolvent is allowed to fail.
    pub in_sector: bool,
    /// θ − |arg(−(λ − μ))|; positive inside the sector.
    pub angular_margin: f64,
}

/// Finite-dimensional necessary-condition diagnostic for sectoriality.
#[derive(Debug, Clone)]
pub struct SectorReport {
    pub entries: Vec<EigenSector>,
    /// max of ‖(w − A)⁻¹‖·|w − μ| over 32 points on the sector boundary.
    pub sampled_bound: f64,
    pub pass: bool,
    pub warnings: Vec<String>,
}

/// Checks that every eigenvalue lies in `μ + S_θ`, S_θ = {w : |arg(−w)| < θ},
/// and samples the resolvent bound on the sector boundary.
pub fn sector_check(alpha: f64, op: &OperatorSpec, params: SectorParams) -> SectorReport {
    let mut warnings = Vec::new();
    if !(alpha > 0.0 && alpha < 1.0) {
        warnings.push(format!("fractional order {alpha} outside (0, 1)"));
    }
    let entries: Vec<EigenSector> = op
        .eigenvalues()
        .into_iter()
        .map(|lambda| {
            let d = lambda - params.mu;
            let (in_sector, angular_margin) = if d.norm() == 0.0 {
                (false, 0.0)
            } else {
                let ang = (-d).arg().abs();
                (ang < params.theta, params.theta - ang)
            };
            EigenSector { eigenvalue: lambda, in_sector, angular_margin }
        })
        .collect();
    for e in entries.iter().filter(|e| !e.in_sector) {
        warnings.push(format!("eigenvalue {} lies outside mu + S_theta", e.eigenvalue));
    }

    let a = op.as_matrix();
    let n = a.nrows();
    let radius = 1.0 + op.norm();
    let mut sampled_bound: f64 = 0.0;
    for side in [-1.0, 1.0] {
        let dir = Complex64::from_polar(1.0, PI + side * params.theta);
        for k in 0..16 {
            let r = radius * 10f64.powf(-1.0 + 3.0 * k as f64 / 15.0);
            let w = params.mu + dir * r;
            let shifted = CMatrix::identity(n, n) * w - &a;
            let svd = SVD::new(shifted, false, false);
            let smallest = svd.singular_values.iter().copied().fold(f64::INFINITY, f64::min);
            let bound = if smallest > 0.0 { r / smallest } else { f64::INFINITY };
            sampled_bound = sampled_bound.max(bound);
        }
    }
    if sampled_bound > params.m {
        warnings.push(format!(
            "sampled resolvent bound {sampled_bound:.3e} exceeds M = {}",
            params.m
        ));
    }
    let pass = entries.iter().all(|e| e.in_sector);
    SectorReport { entries, sampled_bound, pass, warnings }
}
