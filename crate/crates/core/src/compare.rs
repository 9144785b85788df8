//! Methods-by-datasets RMSE_VA table built from evaluation reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::ReportDocument;

/// Scores equal at four decimals count as tied for best.
const TIE_DECIMALS: f64 = 1e4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    pub scores: Vec<f64>,
    pub best: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub datasets: Vec<String>,
    pub rows: Vec<ComparisonRow>,
}

/// Rows keep the order in which methods first appear; columns follow the
/// first method's datasets.
pub fn compare_reports(reports: &[ReportDocument]) -> Result<ComparisonTable> {
    if reports.is_empty() {
        return Err(Error::Data("no reports to compare".into()));
    }
    let mut methods: Vec<&str> = Vec::new();
    let mut datasets: Vec<&str> = Vec::new();
    let mut cells: BTreeMap<(&str, &str), f64> = BTreeMap::new();
    for r in reports {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
        if r.method == reports[0].method {
            datasets.push(&r.dataset);
        }
        if cells.insert((&r.method, &r.dataset), r.report.rmse_va).is_some() {
            return Err(Error::Data(format!(
                "duplicate report for method {:?} on dataset {:?}",
                r.method, r.dataset
            )));
        }
    }
    let expected: BTreeSet<&str> = datasets.iter().copied().collect();
    for m in &methods {
        let have: BTreeSet<&str> = cells.keys().filter(|(k, _)| k == m).map(|&(_, d)| d).collect();
        if have != expected {
            let missing: Vec<_> = expected.difference(&have).copied().collect();
            let extra: Vec<_> = have.difference(&expected).copied().collect();
            return Err(Error::Data(format!(
                "inconsistent dataset sets: method {m:?} lacks [{}] and has extra [{}] relative to {:?}",
                missing.join(", "),
                extra.join(", "),
                reports[0].method
            )));
        }
    }
    let key = |x: f64| (x * TIE_DECIMALS).round();
    let best: Vec<f64> = datasets
        .iter()
        .map(|d| {
            methods
                .iter()
                .map(|m| key(cells[&(*m, *d)]))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let rows = methods
        .iter()
        .map(|m| {
            let scores: Vec<f64> = datasets.iter().map(|d| cells[&(*m, *d)]).collect();
            let best = scores.iter().zip(&best).map(|(&s, &b)| key(s) == b).collect();
            ComparisonRow {
                method: m.to_string(),
                scores,
                best,
            }
        })
        .collect();
    Ok(ComparisonTable {
        datasets: datasets.into_iter().map(String::from).collect(),
        rows,
    })
}

impl fmt::Display for ComparisonTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self
            .rows
            .iter()
            .map(|r| r.method.chars().count())
            .chain([6])
            .max()
            .unwrap_or(6);
        write!(f, "{:<width$}", "Method")?;
        for d in &self.datasets {
            write!(f, " {:>12}", d)?;
        }
        for row in &self.rows {
            writeln!(f)?;
            write!(f, "{:<width$}", row.method)?;
            for (s, b) in row.scores.iter().zip(&row.best) {
                let cell = format!("{s:.4}{}", if *b { "*" } else { " " });
                write!(f, " {cell:>12}")?;
            }
        }
        write!(f, "\n(RMSE_VA, lower is better; * marks the best per column)")
    }
}
