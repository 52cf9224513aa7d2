use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use impfrac::mlf::{mlf_contour, mlf_series, mittag_leffler, ContourParams, MLArgs};
use impfrac::Complex64;
use impfrac_cli::config::{self, Scenario};
use impfrac_cli::converge::{convergence_study, format_tables, tables_csv};
use impfrac_cli::error::{CliError, Result};
use impfrac_cli::output::write_atomic;
use impfrac_cli::scenario::{output_dir, run_scenario};
use impfrac_cli::svg;

#[derive(Parser)]
#[command(name = "impfrac", version, about = "Evaluate and verify solution formulas of impulsive fractional evolution equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every check of a scenario and compare with its expectations.
    Run {
        config: String,
        /// Treat CONFIG as the name of a bundled scenario.
        #[arg(long)]
        bundled: bool,
        /// Output directory (overrides IMPFRAC_OUT and the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print and write the refinement table of a ladder-based check.
    Converge {
        config: String,
        check: String,
        #[arg(long)]
        bundled: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Plot residual or jump CSV files; the last path is the SVG to write.
    Plot {
        #[arg(required = true, num_args = 2..)]
        files: Vec<PathBuf>,
        /// Impulse time to mark with a vertical rule (repeatable).
        #[arg(long = "impulse")]
        impulses: Vec<f64>,
    },
    /// Evaluate E_{alpha,beta}(re + i·im) by series and by contour.
    #[command(allow_negative_numbers = true)]
    Mlf { alpha: f64, beta: f64, re: f64, im: f64 },
}

fn load(config: &str, bundled: bool) -> Result<(Scenario, String, String)> {
    let (text, source) = if bundled {
        let text = impfrac_cli::bundled(config).ok_or_else(|| {
            let names: Vec<&str> = impfrac_cli::BUNDLED.iter().map(|b| b.0).collect();
            CliError::ConfigInvalid(format!("no bundled scenario `{config}` (available: {})", names.join(", ")))
        })?;
        (text.to_string(), format!("bundled:{config}"))
    } else {
        (std::fs::read_to_string(config).map_err(CliError::io(config))?, config.to_string())
    };
    Ok((config::load(&text)?, text, source))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, bundled, out } => {
            let (scenario, text, source) = load(&config, bundled)?;
            let dir = output_dir(out.as_deref(), &scenario);
            let manifest = run_scenario(&scenario, &text, &source, &dir)?;
            for c in &manifest.checks {
                for (k, v) in &c.outcomes {
                    println!("{k}: {v}");
                }
            }
            println!("wrote {} data files to {}", manifest.checks.len(), dir.display());
            let mismatches = manifest.mismatches();
            if mismatches.is_empty() {
                Ok(())
            } else {
                Err(CliError::CheckFailed(mismatches))
            }
        }
        Command::Converge { config, check, bundled, out } => {
            let (scenario, _, _) = load(&config, bundled)?;
            let tables = convergence_study(&scenario, &check)?;
            print!("{}", format_tables(&tables));
            let dir = output_dir(out.as_deref(), &scenario);
            let path = dir.join(format!("converge_{check}.csv"));
            write_atomic(&path, tables_csv(&tables).as_bytes())?;
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Plot { mut files, impulses } => {
            let out = files.pop().expect("clap requires two paths");
            let data = files
                .iter()
                .map(|f| {
                    let text = std::fs::read_to_string(f).map_err(CliError::io(f))?;
                    svg::parse(&f.display().to_string(), &text)
                })
                .collect::<Result<Vec<_>>>()?;
            let plot = svg::render(&data, &impulses)?;
            for w in &plot.warnings {
                eprintln!("warning: {w}");
            }
            write_atomic(Path::new(&out), plot.svg.as_bytes())?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Mlf { alpha, beta, re, im } => {
            let z = Complex64::new(re, im);
            let args = MLArgs::new(alpha, beta).map_err(CliError::numeric("mlf"))?;
            let show = |name: &str, r: impfrac::Result<Complex64>| match r {
                Ok(v) => println!("{name:>8}: {:.17e} {:+.17e}i", v.re, v.im),
                Err(e) => println!("{name:>8}: unavailable ({e})"),
            };
            show("series", mlf_series(args, z));
            show("contour", mlf_contour(args, ContourParams::for_argument(alpha, z), z));
            show("dispatch", mittag_leffler(args, z));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::CheckFailed(list) = &e {
                for m in list {
                    eprintln!("  {m}");
                }
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
