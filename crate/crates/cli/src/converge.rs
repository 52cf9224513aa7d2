//! Refinement tables for ladder-based checks.

use std::fmt::Write;

use impfrac::verifier::ResidualReport;
use serde::Serialize;

use crate::config::Scenario;
use crate::error::{CliError, Result};
use crate::output::num;

#[derive(Debug, Clone, Serialize)]
pub struct Row {
    pub h: f64,
    pub sup: f64,
    /// `log(sup_prev / sup) / log(h_prev / h)`; `None` on the first level or
    /// when either level sits at the noise floor.
    pub order: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Table {
    pub label: String,
    pub verdict: String,
    pub rows: Vec<Row>,
}

impl Table {
    pub fn from_report(label: String, report: &ResidualReport) -> Self {
        let floor = report.pieces.iter().map(|p| p.noise_floor).fold(0.0, f64::max);
        let trace = report.trace();
        let rows = trace
            .iter()
            .enumerate()
            .map(|(i, &(h, sup))| {
                let order = (i > 0)
                    .then(|| trace[i - 1])
                    .filter(|&(_, prev)| prev > floor && sup > floor)
                    .map(|(hp, prev)| (prev / sup).ln() / (hp / h).ln());
                Row { h, sup, order }
            })
            .collect();
        Table { label, verdict: report.verdict().name().to_string(), rows }
    }

    /// Observed orders, skipping n/a entries.
    pub fn orders(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.order).collect()
    }
}

/// One table per instance of `check`.
pub fn convergence_study(s: &Scenario, check: &str) -> Result<Vec<Table>> {
    let tasks = s.tasks_for(check)?;
    if tasks.iter().any(|t| !t.refinable()) {
        return Err(CliError::CheckUnknown(check.to_string()));
    }
    let trajs = s.trajectories(&tasks)?;
    tasks.iter().map(|t| Ok(Table::from_report(t.name(), &s.ladder(t, &trajs)?))).collect()
}

/// Human-readable rendering.
pub fn format_tables(tables: &[Table]) -> String {
    let mut out = String::new();
    for t in tables {
        let _ = writeln!(out, "{} [{}]", t.label, t.verdict);
        let _ = writeln!(out, "  {:>12}  {:>12}  {:>8}", "h", "sup", "order");
        for r in &t.rows {
            let order = r.order.map_or("n/a".to_string(), |o| format!("{o:.3}"));
            let _ = writeln!(out, "  {:>12.4e}  {:>12.4e}  {:>8}", r.h, r.sup, order);
        }
    }
    out
}

/// CSV rendering: `check,h,sup,order`.
pub fn tables_csv(tables: &[Table]) -> String {
    let mut out = String::from("check,h,sup,order\n");
    for t in tables {
        for r in &t.rows {
            let order = r.order.map_or("n/a".to_string(), num);
            let _ = writeln!(out, "{},{},{},{order}", t.label, num(r.h), num(r.sup));
        }
    }
    out
}
