//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

use impfrac::caputo::{caputo_l1, caputo_quad_vec, Convention, GridFunction};
use impfrac::mlf::{mittag_leffler, mlf_contour, mlf_series, real_pow, ContourParams, MLArgs};
use impfrac::resolvent::OperatorSpec;
use impfrac::solutions::{
    convolve_t_alpha, eval_sol1_with, eval_sol2_with, eval_sol3_with, solve_semilinear_picard, sup_norm, ConvPart,
    EvalOptions, Forcing, ImpulseMap, ImpulsiveProblem, PieceFormula, Trajectory,
};
use impfrac::verifier::{
    check_resolvent_identities, check_restart_residual, check_shifted_origin, residual_at_nodes, residual_g,
    verify_solution_formulas, LowerLimit, ResidualOptions, Verdict,
};
use impfrac::{CMatrix, CVector, Complex64};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn v1(re: f64) -> CVector {
    CVector::from_element(1, c(re, 0.0))
}

fn v2(a: f64, b: f64) -> CVector {
    CVector::from_vec(vec![c(a, 0.0), c(b, 0.0)])
}

fn report(id: u32, name: &str, pass: bool, detail: String) {
    println!("criterion {id:02} {name}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
}

const EVAL: EvalOptions = EvalOptions { nodes_per_piece: 64 };

/// One impulse of size 1 at t = 1 for `D^α x = −x + t`, x(0) = 1, on [0, 2].
fn counterexample() -> ImpulsiveProblem {
    ImpulsiveProblem::new(
        2.0 / 3.0,
        OperatorSpec::scalar(c(-1.0, 0.0)),
        Forcing::Polynomial(vec![v1(0.0), v1(1.0)]),
        v1(1.0),
        vec![1.0],
        vec![ImpulseMap::constant(v1(1.0))],
        2.0,
    )
    .unwrap()
}

fn matrix_op() -> OperatorSpec {
    OperatorSpec::matrix(CMatrix::from_row_slice(2, 2, &[c(-1.0, 0.0), c(0.5, 0.0), c(0.0, 0.0), c(-2.0, 0.0)])).unwrap()
}

fn matrix_problem(times: Vec<f64>) -> ImpulsiveProblem {
    let b = CMatrix::from_row_slice(2, 2, &[c(0.2, 0.0), c(0.0, 0.0), c(0.1, 0.0), c(-0.3, 0.0)]);
    let maps = times
        .iter()
        .enumerate()
        .map(|(k, _)| ImpulseMap::Affine { b: Some(b.clone()), c: v2(1.0, -0.5 * k as f64) })
        .collect();
    ImpulsiveProblem::new(
        0.7,
        matrix_op(),
        Forcing::Polynomial(vec![v2(0.0, 1.0), v2(1.0, 0.0)]),
        v2(1.0, -1.0),
        times,
        maps,
        2.0,
    )
    .unwrap()
}

#[test]
fn criterion_01_special_function_cross_validation() {
    let mut rng = StdRng::seed_from_u64(20_261_015);
    let (mut compared, mut worst) = (0, 0.0_f64);
    for _ in 0..100 {
        let alpha = rng.random_range(0.3..=1.0);
        let beta = if rng.random_bool(0.5) { 1.0 } else { alpha };
        let z = Complex64::from_polar(8.0 * rng.random::<f64>().sqrt(), rng.random_range(-std::f64::consts::PI..std::f64::consts::PI));
        let args = MLArgs::new(alpha, beta).unwrap();
        let contour = mlf_contour(args, ContourParams::for_argument(alpha, z), z).unwrap();
        if let Ok(series) = mlf_series(args, z) {
            compared += 1;
            worst = worst.max((series - contour).norm() / contour.norm().max(1.0));
        }
    }
    let mut worst_exp = 0.0_f64;
    for k in 0..20 {
        let z = Complex64::from_polar(0.4 * k as f64, 0.7 * k as f64);
        let e = mittag_leffler(MLArgs::new(1.0, 1.0).unwrap(), z).unwrap();
        worst_exp = worst_exp.max((e - z.exp()).norm() / z.exp().norm());
    }
    let pass = compared >= 50 && worst <= 1e-9 && worst_exp <= 1e-12;
    report(1, "special-function cross-validation", pass, format!("{compared}/100 compared, worst {worst:.2e}, exp {worst_exp:.2e}"));
    assert!(pass);
}

#[test]
fn criterion_02_resolvent_identities_decay() {
    let opts = ResidualOptions::default();
    let ops = [
        ("ρ=−1", OperatorSpec::scalar(c(-1.0, 0.0))),
        ("ρ=−0.3+0.4i", OperatorSpec::scalar(c(-0.3, 0.4))),
        ("2×2", matrix_op()),
    ];
    let mut pass = true;
    let mut min_ratio = f64::INFINITY;
    for (label, op) in &ops {
        let n = op.dim();
        let x0 = CVector::from_fn(n, |i, _| c(1.0 - i as f64, 0.5));
        let f: Vec<CVector> = (0..2).map(|j| CVector::from_fn(n, |i, _| c((i + j) as f64 * 0.5 + 0.5, 0.0))).collect();
        for alpha in [0.4, 2.0 / 3.0, 0.9] {
            let r = check_resolvent_identities(alpha, op, &x0, &f, 1.0, &opts).unwrap();
            for (which, rep) in [("homogeneous", &r.homogeneous), ("convolution", &r.convolution)] {
                let sups: Vec<f64> = rep.trace().iter().map(|t| t.1).collect();
                let ok = sups.windows(2).all(|w| w[0] >= 1.5 * w[1]);
                min_ratio = sups.windows(2).map(|w| w[0] / w[1]).fold(min_ratio, f64::min);
                if !ok {
                    println!("  {label} α={alpha:.3} {which}: {sups:?}");
                }
                pass &= ok;
            }
        }
    }
    report(2, "resolvent identities decay under refinement", pass, format!("minimum halving ratio {min_ratio:.2}"));
    assert!(pass);
}

#[test]
fn criterion_03_shifted_origin() {
    let opts = ResidualOptions::default();
    let mut pass = true;
    let mut detail = Vec::new();
    for (label, op, y) in [
        ("scalar", OperatorSpec::scalar(c(-1.0, 0.0)), v1(1.0)),
        ("2×2", matrix_op(), v2(1.0, 0.5)),
    ] {
        let r = check_shifted_origin(2.0 / 3.0, &op, 1.0, &y, 2.0, &opts).unwrap();
        let gap = r.from_zero.trace().iter().map(|t| t.1).fold(f64::INFINITY, f64::min);
        let err = r.from_zero.error_estimate();
        pass &= r.shifted.verdict() == Verdict::VanishesUnderRefinement
            && r.from_zero.verdict() == Verdict::BoundedAwayFromZero
            && gap >= 10.0 * err;
        detail.push(format!("{label}: {} / {}, gap {gap:.3e} vs error {err:.1e}", r.shifted.verdict().name(), r.from_zero.verdict().name()));
    }
    report(3, "shifted-origin residual", pass, detail.join("; "));
    assert!(pass);
}

#[test]
fn criterion_04_counterexample() {
    let (alpha, rho, t1, y1) = (2.0 / 3.0, c(-1.0, 0.0), 1.0, c(1.0, 0.0));
    let tol = 1e-10;
    let nodes = [1.2, 1.5, 1.8];
    let p = counterexample();
    let sol1 = eval_sol1_with(&p, &EVAL).unwrap();
    let res = residual_at_nodes(&p, &sol1, Convention::FormulaExtension, LowerLimit::Zero, &nodes, tol).unwrap();
    let mut pass = true;
    let mut worst_identity = 0.0_f64;
    let ml = |beta: f64, z: Complex64| mittag_leffler(MLArgs::new(alpha, beta).unwrap(), z).unwrap();
    for (&t, r) in nodes.iter().zip(&res) {
        let (g, gerr) = residual_g(rho, alpha, t1, y1, t, tol).unwrap();
        pass &= g.norm() >= 10.0 * gerr && sup_norm(&r.residual) >= 10.0 * r.error;
        // D^α from 0 of E(ρ(s−t₁)^α)y₁ = ρE(ρ(t−t₁)^α)y₁ + G(t)
        let df = |s: f64| {
            let u = s - t1;
            CVector::from_element(1, rho * real_pow(u, alpha - 1.0) * ml(alpha, rho * real_pow(u, alpha)) * y1)
        };
        let lhs = caputo_quad_vec(&df, 1, 0.0, t, alpha, &[t1], tol).unwrap();
        let rhs = rho * ml(1.0, rho * real_pow(t - t1, alpha)) * y1 + g;
        let gap = (lhs.value[0] - rhs).norm();
        worst_identity = worst_identity.max(gap);
        pass &= gap <= 10.0 * tol;
        println!("  t={t}: |G|={:.4e} (err {gerr:.1e}), |sol1 residual|={:.4e} (err {:.1e})", g.norm(), sup_norm(&r.residual), r.error);
    }
    report(4, "counterexample residuals", pass, format!("decomposition gap {worst_identity:.1e} vs {:.0e}", 10.0 * tol));
    assert!(pass);
}

#[test]
fn criterion_05_verdict_pattern() {
    let opts = ResidualOptions::default();
    let mut pass = true;
    let mut detail = Vec::new();
    for (label, p) in [("scalar", counterexample()), ("2×2 two impulses", matrix_problem(vec![0.7, 1.4]))] {
        let r = verify_solution_formulas(&p, &EVAL, &opts).unwrap();
        let v = r.verdicts();
        pass &= v == [Verdict::BoundedAwayFromZero, Verdict::BoundedAwayFromZero, Verdict::VanishesUnderRefinement];
        detail.push(format!("{label}: {} {} {}", v[0].name(), v[1].name(), v[2].name()));
    }
    report(5, "solution formula verdicts", pass, detail.join("; "));
    assert!(pass);
}

#[test]
fn criterion_06_restart_residual() {
    let p = counterexample();
    let r = check_restart_residual(&p, &eval_sol1_with(&p, &EVAL).unwrap(), &ResidualOptions::default()).unwrap();
    let pass = r.pieces.len() == 2 && r.pieces.iter().all(|q| q.verdict == Verdict::VanishesUnderRefinement);
    report(6, "restarted formula with per-piece lower limits", pass, format!("final sup {:.2e}", r.sup()));
    assert!(pass);
}

fn evaluators(p: &ImpulsiveProblem) -> Vec<Trajectory> {
    vec![eval_sol1_with(p, &EVAL).unwrap(), eval_sol2_with(p, &EVAL).unwrap(), eval_sol3_with(p, &EVAL).unwrap()]
}

#[test]
fn criterion_07_jump_conditions() {
    let mut worst = 0.0_f64;
    let mut initial_exact = true;
    for p in [counterexample(), matrix_problem(vec![0.7, 1.4])] {
        for traj in evaluators(&p) {
            for (k, left) in traj.left.iter().enumerate() {
                let expected = p.impulse_maps[k].apply(left).unwrap();
                worst = worst.max(sup_norm(&(traj.jump(k) - expected)));
            }
            initial_exact &= traj.value_at(0.0).unwrap() == p.x0
                && traj.samples()[0].2 == p.x0
                && traj.pieces[0].formula.value(p.alpha, &p.op, 0.0).unwrap() == p.x0;
        }
    }
    let pass = worst <= 1e-11 && initial_exact;
    report(7, "jump conditions", pass, format!("worst jump defect {worst:.1e}, x(0) exact: {initial_exact}"));
    assert!(pass);
}

#[test]
fn criterion_08_degenerate_agreement() {
    let mut worst_eval = 0.0_f64;
    for p in [
        ImpulsiveProblem::new(2.0 / 3.0, OperatorSpec::scalar(c(-1.0, 0.0)), Forcing::Polynomial(vec![v1(0.0), v1(1.0)]), v1(1.0), vec![], vec![], 2.0).unwrap(),
        matrix_problem(vec![]),
    ] {
        let t = evaluators(&p);
        for s in 1..=200 {
            let tt = 2.0 * s as f64 / 200.0;
            let a = t[0].value_at(tt).unwrap();
            for other in &t[1..] {
                worst_eval = worst_eval.max(sup_norm(&(other.value_at(tt).unwrap() - &a)));
            }
        }
    }
    let scalar = counterexample();
    let mut as_matrix = counterexample();
    as_matrix.op = OperatorSpec::matrix(CMatrix::from_element(1, 1, c(-1.0, 0.0))).unwrap();
    let mut worst_path = 0.0_f64;
    for (a, b) in evaluators(&scalar).iter().zip(evaluators(&as_matrix)) {
        for ((_, _, x), (_, _, y)) in a.samples().iter().zip(b.samples()) {
            worst_path = worst_path.max(sup_norm(&(x - y)) / sup_norm(x).max(1.0));
        }
    }
    let pass = worst_eval <= 1e-10 && worst_path <= 1e-12;
    report(8, "degenerate agreement", pass, format!("evaluators {worst_eval:.1e}, 1×1 vs scalar {worst_path:.1e}"));
    assert!(pass);
}

fn observed_orders(errors: &[f64]) -> Vec<f64> {
    errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

#[test]
fn criterion_09_convergence_orders() {
    let mut pass = true;
    let mut detail = Vec::new();
    for alpha in [0.3, 0.5, 0.8] {
        for p in [2, 3] {
            let exact = impfrac::gamma::gamma(p as f64 + 1.0) / impfrac::gamma::gamma(p as f64 + 1.0 - alpha);
            let errors: Vec<f64> = [32, 64, 128, 256]
                .iter()
                .map(|&n| {
                    let g = GridFunction::uniform(0.0, 1.0, n, |t| v1(t.powi(p))).unwrap();
                    let d = caputo_l1(&g, alpha).unwrap();
                    (d.values.last().unwrap()[0] - exact).norm()
                })
                .collect();
            let order = observed_orders(&errors).into_iter().fold(f64::INFINITY, f64::min);
            pass &= order >= 2.0 - alpha - 0.2;
            detail.push(format!("L1 α={alpha} t^{p}: {order:.2}"));
        }
    }
    let op = matrix_op();
    let coeffs = [v2(1.0, 0.0), v2(0.5, 1.0), v2(0.5, -0.25)];
    let f = |t: f64| &coeffs[0] + &coeffs[1] * c(t, 0.0) + &coeffs[2] * c(t * t, 0.0);
    for alpha in [0.4, 0.7] {
        let exact = PieceFormula { terms: vec![], conv: ConvPart::polynomial(0.0, &coeffs) }.value(alpha, &op, 1.5).unwrap();
        let errors: Vec<f64> = [0.1, 0.05, 0.025, 0.0125]
            .iter()
            .map(|&h| sup_norm(&(convolve_t_alpha(alpha, &op, f, 1.5, h).unwrap() - &exact)))
            .collect();
        let order = observed_orders(&errors).into_iter().fold(f64::INFINITY, f64::min);
        pass &= order >= 1.8;
        detail.push(format!("convolution α={alpha}: {order:.2}"));
    }
    report(9, "convergence orders", pass, detail.join(", "));
    assert!(pass);
}

#[test]
fn criterion_10_picard() {
    let linear = solve_semilinear_picard(&counterexample(), &EVAL, 1e-10, 50).unwrap();
    let mut p = counterexample();
    p.forcing = Forcing::state(|t, x| CVector::from_element(1, c(t, 0.0) + 0.2 * x[0].sin()));
    let opts = EvalOptions { nodes_per_piece: 128 };
    let x = solve_semilinear_picard(&p, &opts, 1e-12, 60).unwrap();
    let nodes: Vec<f64> = (1..=32).map(|j| j as f64 / 16.0).collect();
    let res = residual_at_nodes(&p, &x, Convention::FormulaExtension, LowerLimit::Zero, &nodes, 1e-10).unwrap();
    let worst = res.iter().map(|r| sup_norm(&r.residual)).fold(0.0, f64::max);
    let pass = linear.iterations == Some(1) && worst <= 1e-6;
    report(10, "Picard solver", pass, format!("state-free iterations {:?}, semilinear iterations {:?}, residual {worst:.1e}", linear.iterations, x.iterations));
    assert!(pass);
}
