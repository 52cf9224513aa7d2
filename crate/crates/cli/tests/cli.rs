use std::path::Path;
use std::process::{Command, Output};

use impfrac_cli::config;
use impfrac_cli::converge::convergence_study;
use serde_json::Value;

fn impfrac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_impfrac")).args(args).env_remove(impfrac_cli::OUT_ENV).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("scenario.toml");
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

const SCALAR: &str = r#"
[problem]
alpha = 0.6
operator = { scalar = [-1.0, 0.0] }
forcing = { kind = "linear" }
x0 = [[1.0, 0.0]]
horizon = 2.0

[[problem.impulses]]
time = 1.0
value = [[1.0, 0.0]]
"#;

#[test]
fn bundled_counterexample_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = impfrac(&["run", "--bundled", "counterexample", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("residual/sol1/formula_extension/post_impulse: BOUNDED_AWAY_FROM_ZERO"));
    assert!(stdout.contains("residual/sol2/formula_extension/post_impulse: BOUNDED_AWAY_FROM_ZERO"));
    assert!(stdout.contains("residual/sol3/formula_extension: VANISHES_UNDER_REFINEMENT"));

    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["passed"], Value::Bool(true));
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    let checks = manifest["checks"].as_array().unwrap();
    let mut files: Vec<&str> = checks.iter().map(|c| c["file"].as_str().unwrap()).collect();
    let n = files.len();
    files.sort();
    files.dedup();
    assert_eq!(files.len(), n, "one file per check");
    for c in checks {
        assert!(c["wall_clock_s"].as_f64().unwrap() >= 0.0);
    }
    let plots = manifest["plots"].as_array().unwrap();
    assert!(!plots.is_empty());
    for f in files.iter().copied().chain(plots.iter().map(|p| p.as_str().unwrap())) {
        let len = std::fs::metadata(out.join(f)).unwrap().len();
        assert!(len > 0, "{f} is empty");
    }
    // three residual curves, sol3 lowest after the impulse
    let svg = std::fs::read_to_string(out.join("residual_formula_extension.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 3);
    let last = |ev: &str| {
        let path = out.join(format!("residual_{ev}_formula_extension.csv"));
        match impfrac_cli::svg::parse(path.to_str().unwrap(), &std::fs::read_to_string(&path).unwrap()).unwrap() {
            impfrac_cli::svg::PlotData::Residual { points, .. } => points.last().unwrap().1,
            other => panic!("{other:?}"),
        }
    };
    assert!(last("sol3") < last("sol1").min(last("sol2")));
}

#[test]
fn no_impulses_evaluators_agree() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = impfrac(&["run", "--bundled", "no_impulses", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let read = |ev: &str| -> Vec<Vec<f64>> {
        std::fs::read_to_string(out.join(format!("trajectory_{ev}.csv")))
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
            .collect()
    };
    let base = read("sol1");
    assert!(base.len() > 100);
    for ev in ["sol2", "sol3"] {
        for (a, b) in base.iter().zip(read(ev)) {
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()), "{ev}: {x} vs {y}");
            }
        }
    }
}

#[test]
fn impulse_at_horizon_is_invalid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SCALAR.replace("time = 1.0", "time = 2.0"));
    let o = impfrac(&["run", &cfg, "--out", dir.path().join("out").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("problem.impulses[0].time"), "{}", stderr(&o));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn unknown_key_is_invalid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SCALAR.replace("horizon = 2.0", "horizon = 2.0\nhorizn = 3.0"));
    let o = impfrac(&["run", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("horizn"));
}

#[test]
fn csv_output_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{SCALAR}\n[run]\nchecks = [\"residual\", \"jumps\", \"trajectory\", \"counterexample\"]\nlevels = 2\n");
    let cfg = write_config(dir.path(), &text);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        assert!(impfrac(&["run", &cfg, "--out", d.to_str().unwrap()]).status.success());
    }
    let mut n = 0;
    for entry in std::fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name();
        if Path::new(&name).extension().is_some_and(|e| e == "csv") {
            assert_eq!(std::fs::read(a.join(&name)).unwrap(), std::fs::read(b.join(&name)).unwrap(), "{name:?}");
            n += 1;
        }
    }
    assert_eq!(n, 10);
}

#[test]
fn mismatched_expectation_fails_and_lists_key() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        "{SCALAR}\n[run]\nchecks = [\"residual\"]\nevaluators = [\"sol2\"]\nlevels = 2\n[run.expect]\n\"residual/sol2/formula_extension/post_impulse\" = \"VANISHES_UNDER_REFINEMENT\"\n\"jumps/sol2\" = \"HOLDS\"\n"
    );
    let cfg = write_config(dir.path(), &text);
    let out = dir.path().join("out");
    let o = impfrac(&["run", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("residual/sol2/formula_extension/post_impulse: expected VANISHES_UNDER_REFINEMENT"), "{err}");
    assert!(err.contains("jumps/sol2: expected HOLDS, but no check produced it"), "{err}");
    assert!(out.join("manifest.json").exists());
}

#[test]
fn output_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{SCALAR}\n[run]\nchecks = [\"jumps\"]\n[output]\ndirectory = \"unused\"\nformats = [\"csv\"]\n");
    let cfg = write_config(dir.path(), &text);
    let env_dir = dir.path().join("env");
    let o = Command::new(env!("CARGO_BIN_EXE_impfrac"))
        .args(["run", &cfg])
        .current_dir(dir.path())
        .env(impfrac_cli::OUT_ENV, &env_dir)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(env_dir.join("jumps_sol3.csv").exists());
    assert!(!env_dir.join("jumps_sol3.svg").exists());
    assert!(!dir.path().join("unused").exists());
}

#[test]
fn semilinear_expression_forcing() {
    let dir = tempfile::tempdir().unwrap();
    let text = SCALAR.replace("{ kind = \"linear\" }", "{ kind = \"expression\", components = [\"t + 0.2*sin(re_x)\"] }")
        + "\n[run]\nevaluators = [\"picard\"]\nchecks = [\"residual\", \"trajectory\"]\n[run.expect]\n\"residual/picard/formula_extension\" = \"VANISHES_UNDER_REFINEMENT\"\n";
    let cfg = write_config(dir.path(), &text);
    let out = dir.path().join("out");
    let o = impfrac(&["run", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("trajectory/picard/iterations"));
}

#[test]
fn resolvent_identity_orders() {
    let s = config::load(SCALAR).unwrap();
    let tables = convergence_study(&s, "resolvent_identities").unwrap();
    assert_eq!(tables.len(), 2);
    for t in &tables {
        let orders = t.orders();
        assert_eq!(orders.len(), 3, "{}", t.label);
        assert!(orders.iter().all(|&o| o >= 2.0 - 0.6 - 0.2), "{}: {orders:?}", t.label);
    }
}

#[test]
fn zero_operator_orders_are_na() {
    let text = SCALAR.replace("scalar = [-1.0, 0.0]", "scalar = [0.0, 0.0]").replace("{ kind = \"linear\" }", "{ kind = \"zero\" }");
    let s = config::load(&text).unwrap();
    for t in convergence_study(&s, "resolvent_identities").unwrap() {
        assert!(t.rows.iter().all(|r| r.order.is_none() && r.sup < 1e-12), "{t:?}");
    }
}

#[test]
fn sol3_residual_decreases_monotonically() {
    let text = format!("{SCALAR}\n[run]\nevaluators = [\"sol3\"]\n");
    let s = config::load(&text).unwrap();
    let tables = convergence_study(&s, "residual").unwrap();
    let sups: Vec<f64> = tables[0].rows.iter().map(|r| r.sup).collect();
    assert!(sups.windows(2).all(|w| w[1] < w[0]), "{sups:?}");
}

#[test]
fn converge_command_and_unknown_check() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SCALAR);
    let out = dir.path().join("out");
    let o = impfrac(&["converge", &cfg, "shifted_origin", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("shifted_origin/from_zero [BOUNDED_AWAY_FROM_ZERO]"));
    let csv = std::fs::read_to_string(out.join("converge_shifted_origin.csv")).unwrap();
    assert!(csv.starts_with("check,h,sup,order\n"));
    assert_eq!(impfrac(&["converge", &cfg, "jumps"]).status.code(), Some(2));
    assert_eq!(impfrac(&["converge", &cfg, "bogus"]).status.code(), Some(2));
}

#[test]
fn plot_command() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let empty = d.join("empty.csv");
    std::fs::write(&empty, "t,piece,re_x,im_x,re_res,im_res,convention\n").unwrap();
    let svg = d.join("empty.svg");
    let o = impfrac(&["plot", empty.to_str().unwrap(), svg.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stderr(&o).contains("warning"));
    let body = std::fs::read_to_string(&svg).unwrap();
    assert!(body.contains("<svg") && !body.contains("<polyline"));

    let jumps = d.join("jumps.csv");
    std::fs::write(&jumps, "k,t,re_dx,im_dx,re_imp,im_imp\n0,1e0,1e0,0e0,1e0,0e0\n").unwrap();
    let svg = d.join("jumps.svg");
    assert!(impfrac(&["plot", jumps.to_str().unwrap(), svg.to_str().unwrap()]).status.success());
    let body = std::fs::read_to_string(&svg).unwrap();
    let heights: Vec<&str> = body.lines().filter(|l| l.contains("<rect") && l.contains("fill=\"#")).filter_map(|l| l.split("height=\"").nth(1)?.split('"').next()).collect();
    assert_eq!(heights.len(), 2);
    assert_eq!(heights[0], heights[1]);

    let bad = d.join("bad.csv");
    std::fs::write(&bad, "x,y\n1,2\n").unwrap();
    let o = impfrac(&["plot", bad.to_str().unwrap(), d.join("bad.svg").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn mlf_prints_both_algorithms() {
    let o = impfrac(&["mlf", "0.5", "1", "-1", "0"]);
    assert!(o.status.success());
    let s = String::from_utf8_lossy(&o.stdout);
    assert!(s.contains("series:") && s.contains("contour:"));
    // E_{1/2}(-1) = e·erfc(1)
    assert!(s.contains("4.275835761558"), "{s}");
}
