//! Scenario execution: evaluators, checks, data files and the run manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use impfrac::caputo::Convention;
use impfrac::resolvent::OperatorKind;
use impfrac::solutions::{
    eval_sol1_with, eval_sol2_with, eval_sol3_with, solve_semilinear_picard, sup_norm, ConvPart, EvalOptions,
    Evaluator, PieceFormula, Trajectory,
};
use impfrac::verifier::{
    check_resolvent_identities, check_restart_residual, check_shifted_origin, demo_restart_mismatch, residual,
    residual_f, residual_g, ResidualOptions, ResidualReport, Verdict, SEPARATION,
};
use impfrac::{CVector, Complex64};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{ForcingKind, Scenario, HOLDS, VIOLATED};
use crate::error::{CliError, Result};
use crate::output::{comp, hex, num, re_im, write_atomic, Csv};
use crate::svg;

/// Header of every residual-layout file.
pub const RESIDUAL_COLUMNS: [&str; 7] = ["t", "piece", "re_x", "im_x", "re_res", "im_res", "convention"];
pub const JUMP_COLUMNS: [&str; 6] = ["k", "t", "re_dx", "im_dx", "re_imp", "im_imp"];
pub const MANIFEST: &str = "manifest.json";

/// Jump defects above `JUMP_TOL·(1 + |I_k|)` violate the jump condition.
const JUMP_TOL: f64 = 1e-11;

/// One unit of work producing exactly one data file.
#[derive(Debug, Clone, PartialEq)]
pub enum Task {
    Residual(Evaluator, Convention),
    Restart(Evaluator),
    Jumps(Evaluator),
    Trajectory(Evaluator),
    ResolventIdentity(Identity),
    ShiftedOrigin(OriginChoice),
    RestartMismatch,
    Counterexample,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Identity {
    Homogeneous,
    Convolution,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OriginChoice {
    Shifted,
    FromZero,
}

impl Task {
    /// Instance name; also the prefix of its outcome keys.
    pub fn name(&self) -> String {
        match self {
            Task::Residual(e, c) => format!("residual/{}/{}", e.name(), c.name()),
            Task::Restart(e) => format!("restart/{}", e.name()),
            Task::Jumps(e) => format!("jumps/{}", e.name()),
            Task::Trajectory(e) => format!("trajectory/{}", e.name()),
            Task::ResolventIdentity(Identity::Homogeneous) => "resolvent_identities/homogeneous".into(),
            Task::ResolventIdentity(Identity::Convolution) => "resolvent_identities/convolution".into(),
            Task::ShiftedOrigin(OriginChoice::Shifted) => "shifted_origin/shifted".into(),
            Task::ShiftedOrigin(OriginChoice::FromZero) => "shifted_origin/from_zero".into(),
            Task::RestartMismatch => "restart_mismatch".into(),
            Task::Counterexample => "counterexample".into(),
        }
    }

    pub fn file(&self) -> String {
        format!("{}.csv", self.name().replace('/', "_"))
    }

    pub fn evaluator(&self) -> Option<Evaluator> {
        match self {
            Task::Residual(e, _) | Task::Restart(e) | Task::Jumps(e) | Task::Trajectory(e) => Some(*e),
            _ => None,
        }
    }

    /// Checks with a refinement ladder.
    pub fn refinable(&self) -> bool {
        matches!(self, Task::Residual(..) | Task::Restart(_) | Task::ResolventIdentity(_) | Task::ShiftedOrigin(_))
    }
}

pub fn evaluator_from_name(s: &str) -> Evaluator {
    match s {
        "sol1" => Evaluator::Sol1,
        "sol2" => Evaluator::Sol2,
        "sol3" => Evaluator::Sol3,
        _ => Evaluator::Picard,
    }
}

fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(CliError::ConfigInvalid(msg.into()))
}

impl Scenario {
    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions { nodes_per_piece: self.config.run.nodes_per_piece }
    }

    pub fn residual_options(&self) -> ResidualOptions {
        let r = &self.config.run;
        ResidualOptions {
            base_divisions: r.base_divisions,
            levels: r.levels,
            eval_per_piece: r.eval_per_piece,
            half_step: r.half_step,
        }
    }

    fn evaluators(&self) -> Vec<Evaluator> {
        self.config.run.evaluators.iter().map(|e| evaluator_from_name(e)).collect()
    }

    fn polynomial_forcing(&self, check: &str) -> Result<&[CVector]> {
        match &self.forcing {
            ForcingKind::Polynomial(c) => Ok(c),
            ForcingKind::Expression(_) => invalid(format!("run.checks: `{check}` needs zero, constant, linear or polynomial forcing")),
        }
    }

    /// Time and jump vector of the first impulse, which must be constant.
    fn first_impulse(&self, check: &str) -> Result<(f64, CVector)> {
        match (self.problem.impulse_times.first(), self.constant_impulses.first()) {
            (Some(&t), Some(Some(y))) => Ok((t, y.clone())),
            _ => invalid(format!("run.checks: `{check}` needs a first impulse given by `value`")),
        }
    }

    /// Nodes of the quadrature-based checks.
    pub fn check_nodes(&self, check: &str) -> Result<Vec<f64>> {
        let (t1, _) = self.first_impulse(check)?;
        let horizon = self.problem.horizon;
        match &self.config.run.check_nodes {
            Some(nodes) => {
                if nodes.is_empty() || nodes.iter().any(|&t| !(t > t1 && t <= horizon)) {
                    return invalid(format!("run.check_nodes: need nodes in ({t1}, {horizon}]"));
                }
                Ok(nodes.clone())
            }
            None => Ok([0.2, 0.5, 0.8].iter().map(|s| t1 + s * (horizon - t1)).collect()),
        }
    }

    /// Expands the configured checks into tasks, rejecting checks the
    /// problem cannot support.
    pub fn tasks(&self) -> Result<Vec<Task>> {
        let mut out = Vec::new();
        for check in &self.config.run.checks {
            out.extend(self.tasks_for(check)?);
        }
        Ok(out)
    }

    pub fn tasks_for(&self, check: &str) -> Result<Vec<Task>> {
        let evs = self.evaluators();
        let p = &self.problem;
        Ok(match check {
            "residual" => evs.iter().flat_map(|&e| self.conventions.iter().map(move |&c| Task::Residual(e, c))).collect(),
            "restart" => {
                if !p.forcing.is_pure_time() {
                    return invalid("run.checks: `restart` needs forcing independent of the state");
                }
                evs.iter().map(|&e| Task::Restart(e)).collect()
            }
            "jumps" => evs.iter().map(|&e| Task::Jumps(e)).collect(),
            "trajectory" => evs.iter().map(|&e| Task::Trajectory(e)).collect(),
            "resolvent_identities" => {
                self.polynomial_forcing(check)?;
                vec![Task::ResolventIdentity(Identity::Homogeneous), Task::ResolventIdentity(Identity::Convolution)]
            }
            "shifted_origin" => {
                self.first_impulse(check)?;
                vec![Task::ShiftedOrigin(OriginChoice::Shifted), Task::ShiftedOrigin(OriginChoice::FromZero)]
            }
            "restart_mismatch" => {
                self.polynomial_forcing(check)?;
                self.check_nodes(check)?;
                vec![Task::RestartMismatch]
            }
            "counterexample" => {
                self.check_nodes(check)?;
                if !matches!(p.op.kind(), OperatorKind::Scalar(_)) {
                    return invalid("run.checks: `counterexample` needs a scalar operator");
                }
                let f = self.polynomial_forcing(check)?;
                let one = Complex64::new(1.0, 0.0);
                let is_t = f.len() >= 2 && f[0][0] == Complex64::default() && f[1][0] == one && f[2..].iter().all(|c| c[0] == Complex64::default());
                if !is_t {
                    return invalid("run.checks: `counterexample` needs the forcing f(t) = t");
                }
                vec![Task::Counterexample]
            }
            other => return Err(CliError::CheckUnknown(other.to_string())),
        })
    }

    pub fn evaluate(&self, ev: Evaluator) -> Result<Trajectory> {
        let p = &self.problem;
        let opts = self.eval_options();
        let r = &self.config.run;
        match ev {
            Evaluator::Sol1 => eval_sol1_with(p, &opts),
            Evaluator::Sol2 => eval_sol2_with(p, &opts),
            Evaluator::Sol3 => eval_sol3_with(p, &opts),
            Evaluator::Picard => solve_semilinear_picard(p, &opts, r.picard_tol, r.picard_max_iter),
        }
        .map_err(CliError::numeric(format!("evaluator {}", ev.name())))
    }

    /// Evaluates every trajectory the tasks need, in parallel.
    pub fn trajectories(&self, tasks: &[Task]) -> Result<BTreeMap<&'static str, Trajectory>> {
        let mut evs: Vec<Evaluator> = Vec::new();
        for e in tasks.iter().filter_map(Task::evaluator) {
            if !evs.contains(&e) {
                evs.push(e);
            }
        }
        evs.par_iter().map(|&e| Ok((e.name(), self.evaluate(e)?))).collect()
    }

    /// Refinement report of a refinable task.
    pub fn ladder(&self, task: &Task, trajs: &BTreeMap<&'static str, Trajectory>) -> Result<ResidualReport> {
        let p = &self.problem;
        let opts = self.residual_options();
        let ctx = CliError::numeric(task.name());
        match task {
            Task::Residual(e, c) => residual(p, &trajs[e.name()], *c, &opts).map_err(ctx),
            Task::Restart(e) => check_restart_residual(p, &trajs[e.name()], &opts).map_err(ctx),
            Task::ResolventIdentity(which) => {
                let f = self.polynomial_forcing("resolvent_identities")?;
                let r = check_resolvent_identities(p.alpha, &p.op, &p.x0, f, p.horizon, &opts).map_err(ctx)?;
                Ok(match which {
                    Identity::Homogeneous => r.homogeneous,
                    Identity::Convolution => r.convolution,
                })
            }
            Task::ShiftedOrigin(which) => {
                let (t1, y) = self.first_impulse("shifted_origin")?;
                let r = check_shifted_origin(p.alpha, &p.op, t1, &y, p.horizon, &opts).map_err(ctx)?;
                Ok(match which {
                    OriginChoice::Shifted => r.shifted,
                    OriginChoice::FromZero => r.from_zero,
                })
            }
            _ => Err(CliError::CheckUnknown(task.name())),
        }
    }

    /// The formula whose residual a ladder task measures, per piece.
    fn formula<'a>(&'a self, task: &Task, trajs: &'a BTreeMap<&'static str, Trajectory>, piece: usize) -> Result<PieceFormula> {
        let p = &self.problem;
        Ok(match task {
            Task::Residual(e, _) | Task::Restart(e) => trajs[e.name()].pieces[piece].formula.clone(),
            Task::ResolventIdentity(Identity::Homogeneous) => PieceFormula { terms: vec![(0.0, p.x0.clone())], conv: ConvPart::None },
            Task::ResolventIdentity(Identity::Convolution) => {
                PieceFormula { terms: vec![], conv: ConvPart::polynomial(0.0, self.polynomial_forcing("resolvent_identities")?) }
            }
            Task::ShiftedOrigin(_) => {
                let (t1, y) = self.first_impulse("shifted_origin")?;
                PieceFormula { terms: vec![(t1, y)], conv: ConvPart::None }
            }
            _ => unreachable!("not a ladder task"),
        })
    }
}

/// Result of one task.
#[derive(Debug, Clone, Serialize)]
pub struct CheckEntry {
    pub name: String,
    pub file: String,
    pub wall_clock_s: f64,
    pub outcomes: BTreeMap<String, String>,
    /// `(h, sup)` per refinement level; empty for non-ladder checks.
    pub trace: Vec<(f64, f64)>,
    #[serde(skip)]
    pub csv: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Expectation {
    pub key: String,
    pub expected: String,
    pub actual: Option<String>,
    pub matched: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config_source: String,
    pub config_sha256: String,
    pub checks: Vec<CheckEntry>,
    pub plots: Vec<String>,
    pub expectations: Vec<Expectation>,
    pub passed: bool,
}

impl RunManifest {
    /// One line per unmatched expectation.
    pub fn mismatches(&self) -> Vec<String> {
        self.expectations
            .iter()
            .filter(|e| !e.matched)
            .map(|e| match &e.actual {
                Some(a) => format!("{}: expected {}, got {a}", e.key, e.expected),
                None => format!("{}: expected {}, but no check produced it", e.key, e.expected),
            })
            .collect()
    }
}

fn residual_csv(s: &Scenario, task: &Task, trajs: &BTreeMap<&'static str, Trajectory>, report: &ResidualReport) -> Result<String> {
    let p = &s.problem;
    let mut csv = Csv::new(&RESIDUAL_COLUMNS, p.dim());
    for piece in &report.pieces {
        let formula = s.formula(task, trajs, piece.piece)?;
        for (&t, r) in piece.nodes.iter().zip(&piece.residuals) {
            let x = formula.value(p.alpha, &p.op, t).map_err(CliError::numeric(task.name()))?;
            csv.rows(|k| {
                let mut row = vec![num(t), piece.piece.to_string()];
                row.extend(comp(&x, k));
                row.extend(comp(r, k));
                row.push(report.convention.name().to_string());
                row
            });
        }
    }
    Ok(csv.finish())
}

/// Verdict of pointwise values against their error estimates.
fn pointwise_verdict(values: &[f64], errors: &[f64]) -> Verdict {
    if values.iter().zip(errors).all(|(v, e)| *v > 0.0 && *v >= SEPARATION * e) {
        Verdict::BoundedAwayFromZero
    } else if values.iter().zip(errors).all(|(v, e)| *v <= SEPARATION * e + 1e-12) {
        Verdict::VanishesUnderRefinement
    } else {
        Verdict::Inconclusive
    }
}

fn run_task(s: &Scenario, task: &Task, trajs: &BTreeMap<&'static str, Trajectory>) -> Result<CheckEntry> {
    let start = Instant::now();
    let p = &s.problem;
    let name = task.name();
    let mut outcomes = BTreeMap::new();
    let mut trace = Vec::new();
    let csv = if task.refinable() {
        let report = s.ladder(task, trajs)?;
        outcomes.insert(name.clone(), report.verdict().name().to_string());
        if matches!(task, Task::Residual(..)) && !p.impulse_times.is_empty() {
            outcomes.insert(format!("{name}/post_impulse"), report.verdict_over(1..).name().to_string());
        }
        trace = report.trace();
        residual_csv(s, task, trajs, &report)?
    } else {
        match task {
            Task::Jumps(e) => {
                let traj = &trajs[e.name()];
                let mut csv = Csv::new(&JUMP_COLUMNS, p.dim());
                let mut holds = true;
                for (k, &tk) in traj.impulse_times.iter().enumerate() {
                    let dx = traj.jump(k);
                    let imp = p.impulse_maps[k].apply(&traj.left[k]).map_err(CliError::numeric(&name))?;
                    holds &= sup_norm(&(&dx - &imp)) <= JUMP_TOL * (1.0 + sup_norm(&imp));
                    csv.rows(|c| {
                        let mut row = vec![k.to_string(), num(tk)];
                        row.extend(comp(&dx, c));
                        row.extend(comp(&imp, c));
                        row
                    });
                }
                outcomes.insert(name.clone(), if holds { HOLDS } else { VIOLATED }.to_string());
                csv.finish()
            }
            Task::Trajectory(e) => {
                let traj = &trajs[e.name()];
                let mut csv = Csv::new(&["t", "piece", "re_x", "im_x"], p.dim());
                for (k, t, x) in traj.samples() {
                    csv.rows(|c| {
                        let mut row = vec![num(t), k.to_string()];
                        row.extend(comp(&x, c));
                        row
                    });
                }
                if let Some(n) = traj.iterations {
                    outcomes.insert(format!("{name}/iterations"), n.to_string());
                }
                csv.finish()
            }
            Task::RestartMismatch => {
                let (t1, y) = s.first_impulse("restart_mismatch")?;
                let nodes = s.check_nodes("restart_mismatch")?;
                let f = s.polynomial_forcing("restart_mismatch")?;
                let entries = demo_restart_mismatch(p.alpha, &p.op, t1, &y, f, &nodes, s.config.run.tol)
                    .map_err(CliError::numeric(&name))?;
                let mut csv = Csv::new(&["label", "t", "re_lhs", "im_lhs", "re_rhs", "im_rhs", "gap", "error"], p.dim());
                for (entry, key) in entries.iter().zip(["convolution", "impulse"]) {
                    let v = if entry.separated() { Verdict::BoundedAwayFromZero } else { Verdict::Inconclusive };
                    outcomes.insert(format!("{name}/{key}"), v.name().to_string());
                    for i in 0..entry.nodes.len() {
                        csv.rows(|c| {
                            let mut row = vec![key.to_string(), num(entry.nodes[i])];
                            row.extend(comp(&entry.lhs[i], c));
                            row.extend(comp(&entry.rhs[i], c));
                            row.push(num(entry.gap[i]));
                            row.push(num(entry.error[i]));
                            row
                        });
                    }
                }
                csv.finish()
            }
            Task::Counterexample => {
                let (t1, y) = s.first_impulse("counterexample")?;
                let nodes = s.check_nodes("counterexample")?;
                let tol = s.config.run.tol;
                let OperatorKind::Scalar(rho) = *p.op.kind() else { unreachable!("checked when planning") };
                let sol3 = eval_sol3_with(p, &s.eval_options()).map_err(CliError::numeric(&name))?;
                let x_minus = sol3.left[0][0];
                let mut csv = Csv::new(&["t", "re_F", "im_F", "err_F", "re_G", "im_G", "err_G"], 1);
                let (mut fs, mut gs) = (Vec::new(), Vec::new());
                for &t in &nodes {
                    let ctx = || CliError::numeric(&name);
                    let f = residual_f(rho, p.alpha, t1, x_minus, y[0], t, tol).map_err(ctx())?;
                    let g = residual_g(rho, p.alpha, t1, y[0], t, tol).map_err(ctx())?;
                    csv.rows(|_| {
                        let mut row = vec![num(t)];
                        row.extend(re_im(f.0));
                        row.push(num(f.1));
                        row.extend(re_im(g.0));
                        row.push(num(g.1));
                        row
                    });
                    fs.push(f);
                    gs.push(g);
                }
                for (key, vals) in [("F", &fs), ("G", &gs)] {
                    let mags: Vec<f64> = vals.iter().map(|v| v.0.norm()).collect();
                    let errs: Vec<f64> = vals.iter().map(|v| v.1).collect();
                    outcomes.insert(format!("{name}/{key}"), pointwise_verdict(&mags, &errs).name().to_string());
                }
                csv.finish()
            }
            _ => unreachable!("ladder tasks handled above"),
        }
    };
    Ok(CheckEntry { name, file: task.file(), wall_clock_s: start.elapsed().as_secs_f64(), outcomes, trace, csv })
}

/// Runs every task, in parallel, and returns entries in task order.
pub fn run_checks(s: &Scenario) -> Result<Vec<CheckEntry>> {
    let tasks = s.tasks()?;
    let trajs = s.trajectories(&tasks)?;
    tasks.par_iter().map(|t| run_task(s, t, &trajs)).collect()
}

fn expectations(s: &Scenario, checks: &[CheckEntry]) -> Vec<Expectation> {
    s.config
        .run
        .expect
        .iter()
        .map(|(key, expected)| {
            let actual = checks.iter().find_map(|c| c.outcomes.get(key)).cloned();
            Expectation { key: key.clone(), expected: expected.clone(), matched: actual.as_ref() == Some(expected), actual }
        })
        .collect()
}

/// Plots drawn from the run's own CSV data: one residual plot per
/// convention and one jump plot per evaluator.
fn plots(s: &Scenario, checks: &[CheckEntry]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for conv in &s.conventions {
        let sources: Vec<(String, &str)> = checks
            .iter()
            .filter(|c| c.name.starts_with("residual/") && c.name.ends_with(&format!("/{}", conv.name())))
            .map(|c| (c.name.split('/').nth(1).unwrap_or_default().to_string(), c.csv.as_str()))
            .collect();
        if !sources.is_empty() {
            let data = sources.iter().map(|(label, text)| svg::parse(label, text)).collect::<Result<Vec<_>>>()?;
            let plot = svg::render(&data, &s.problem.impulse_times)?;
            out.push((format!("residual_{}.svg", conv.name()), plot.svg));
        }
    }
    for c in checks.iter().filter(|c| c.name.starts_with("jumps/")) {
        let data = svg::parse(&c.name, &c.csv)?;
        out.push((c.file.replace(".csv", ".svg"), svg::render(&[data], &s.problem.impulse_times)?.svg));
    }
    Ok(out)
}

/// Runs the scenario and writes data files, plots and the manifest (last)
/// into `dir`. Expectation mismatches are reported in the manifest, not as
/// an error.
pub fn run_scenario(s: &Scenario, config_text: &str, config_source: &str, dir: &Path) -> Result<RunManifest> {
    let checks = run_checks(s)?;
    let formats = &s.config.output.formats;
    // every check has a data file, so `formats` only decides on plots
    checks.par_iter().try_for_each(|c| write_atomic(&dir.join(&c.file), c.csv.as_bytes()))?;
    let mut plot_files = Vec::new();
    if formats.iter().any(|f| f == "svg") {
        for (file, body) in plots(s, &checks)? {
            write_atomic(&dir.join(&file), body.as_bytes())?;
            plot_files.push(file);
        }
    }
    let expectations = expectations(s, &checks);
    let manifest = RunManifest {
        tool: "impfrac".to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_source: config_source.to_string(),
        config_sha256: hex(&Sha256::digest(config_text.as_bytes())),
        passed: expectations.iter().all(|e| e.matched),
        checks,
        plots: plot_files,
        expectations,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_atomic(&dir.join(MANIFEST), json.as_bytes())?;
    Ok(manifest)
}

/// Output directory: explicit flag, then `IMPFRAC_OUT`, then the config.
pub fn output_dir(flag: Option<&Path>, s: &Scenario) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(crate::OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(&s.config.output.directory))
}
