//! Scenario runner for the `impfrac` command-line tool.
//!
//! A scenario is a TOML file describing one impulsive problem and the
//! checks to run on it. [`scenario::run_scenario`] writes one CSV per check
//! instance, optional SVG plots and a `manifest.json`, and compares every
//! outcome with the verdicts declared under `[run.expect]`.

pub mod config;
pub mod converge;
pub mod error;
pub mod expr;
pub mod output;
pub mod scenario;
pub mod svg;

pub use error::{CliError, Result};

/// Environment variable overriding the output directory.
pub const OUT_ENV: &str = "IMPFRAC_OUT";

/// Configs shipped with the tool, by name.
pub const BUNDLED: [(&str, &str); 2] = [
    ("counterexample", include_str!("../configs/counterexample.toml")),
    ("no_impulses", include_str!("../configs/no_impulses.toml")),
];

pub fn bundled(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
