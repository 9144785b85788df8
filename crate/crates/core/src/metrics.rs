//! RMSE_VA and the error-analysis views built on it.
//!
//! All functions pair predictions and golds positionally; callers align by
//! instance key first (see [`align_predictions`]).

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{read_instances, read_predictions, AspectInstance, PredictionRecord};
use crate::error::{Error, Result};
use crate::va::{VaPair, VA_MAX, VA_MIN};

/// Default heatmap edges on both axes.
pub const DEFAULT_EDGES: [f64; 5] = [1.0, 3.0, 5.0, 7.0, 9.0];

fn check_pairs(preds: &[VaPair], golds: &[VaPair]) -> Result<()> {
    if preds.len() != golds.len() {
        return Err(Error::Data(format!(
            "length mismatch: {} predictions vs {} golds",
            preds.len(),
            golds.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Data("cannot score an empty instance set".into()));
    }
    Ok(())
}

fn squared_errors<'a>(preds: &'a [VaPair], golds: &'a [VaPair]) -> impl Iterator<Item = (f64, f64)> + 'a {
    preds.iter().zip(golds).map(|(p, g)| {
        let dv = p.valence() - g.valence();
        let da = p.arousal() - g.arousal();
        (dv * dv, da * da)
    })
}

pub fn rmse_va(preds: &[VaPair], golds: &[VaPair]) -> Result<f64> {
    check_pairs(preds, golds)?;
    let sum: f64 = squared_errors(preds, golds).map(|(v, a)| v + a).sum();
    Ok((sum / preds.len() as f64).sqrt())
}

pub fn rmse_per_dimension(preds: &[VaPair], golds: &[VaPair]) -> Result<(f64, f64)> {
    check_pairs(preds, golds)?;
    let (sv, sa) = squared_errors(preds, golds).fold((0.0, 0.0), |(sv, sa), (v, a)| (sv + v, sa + a));
    let n = preds.len() as f64;
    Ok(((sv / n).sqrt(), (sa / n).sqrt()))
}

/// Euclidean distance between each predicted and gold point.
pub fn per_instance_errors(preds: &[VaPair], golds: &[VaPair]) -> Result<Vec<f64>> {
    if preds.len() != golds.len() {
        return Err(Error::Data(format!(
            "length mismatch: {} predictions vs {} golds",
            preds.len(),
            golds.len()
        )));
    }
    Ok(squared_errors(preds, golds).map(|(v, a)| (v + a).sqrt()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorDistribution {
    pub median: f64,
    pub frac_below_1: f64,
    pub frac_above_2: f64,
}

pub fn error_distribution(errors: &[f64]) -> Result<ErrorDistribution> {
    if errors.is_empty() {
        return Err(Error::Data("error distribution of an empty list".into()));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    };
    let frac = |pred: fn(f64) -> bool| errors.iter().filter(|&&e| pred(e)).count() as f64 / n as f64;
    Ok(ErrorDistribution {
        median,
        frac_below_1: frac(|e| e < 1.0),
        frac_above_2: frac(|e| e > 2.0),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rmse_va: f64,
    pub rmse_v: f64,
    pub rmse_a: f64,
    pub n: usize,
    pub error_median: f64,
    pub frac_below_1: f64,
    pub frac_above_2: f64,
}

pub fn evaluate(preds: &[VaPair], golds: &[VaPair]) -> Result<EvalReport> {
    let rmse_va = rmse_va(preds, golds)?;
    let (rmse_v, rmse_a) = rmse_per_dimension(preds, golds)?;
    let dist = error_distribution(&per_instance_errors(preds, golds)?)?;
    Ok(EvalReport {
        rmse_va,
        rmse_v,
        rmse_a,
        n: preds.len(),
        error_median: dist.median,
        frac_below_1: dist.frac_below_1,
        frac_above_2: dist.frac_above_2,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapCell {
    pub rmse: Option<f64>,
    pub count: usize,
    /// Sum of squared VA errors of the members; lets cells be merged exactly.
    pub sq_error_sum: f64,
}

/// RMSE_VA per (valence bin, arousal bin), binned by gold coordinates.
/// `cells[i][j]` covers `v_edges[i]..v_edges[i+1]` and `a_edges[j]..a_edges[j+1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapGrid {
    pub v_edges: Vec<f64>,
    pub a_edges: Vec<f64>,
    pub cells: Vec<Vec<HeatmapCell>>,
}

impl HeatmapGrid {
    pub fn total_count(&self) -> usize {
        self.cells.iter().flatten().map(|c| c.count).sum()
    }

    /// RMSE_VA over all cells, recovered from the per-cell squared sums.
    pub fn merged_rmse(&self) -> Option<f64> {
        let n = self.total_count();
        (n > 0).then(|| {
            (self.cells.iter().flatten().map(|c| c.sq_error_sum).sum::<f64>() / n as f64).sqrt()
        })
    }
}

pub fn validate_edges(edges: &[f64]) -> Result<()> {
    if edges.len() < 2 {
        return Err(Error::Config("heatmap needs at least two bin edges".into()));
    }
    if edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!(
            "heatmap edges must be strictly ascending: {edges:?}"
        )));
    }
    if edges[0] > VA_MIN || edges[edges.len() - 1] < VA_MAX {
        return Err(Error::Config(format!("heatmap edges must span [1, 9]: {edges:?}")));
    }
    Ok(())
}

/// Left-closed bins; the last bin is also right-closed.
pub fn bin_index(edges: &[f64], x: f64) -> usize {
    let last = edges.len() - 2;
    edges[1..=last].partition_point(|&e| e <= x).min(last)
}

pub fn va_heatmap(
    preds: &[VaPair],
    golds: &[VaPair],
    v_edges: &[f64],
    a_edges: &[f64],
) -> Result<HeatmapGrid> {
    validate_edges(v_edges)?;
    validate_edges(a_edges)?;
    if preds.len() != golds.len() {
        return Err(Error::Data(format!(
            "length mismatch: {} predictions vs {} golds",
            preds.len(),
            golds.len()
        )));
    }
    let empty = HeatmapCell {
        rmse: None,
        count: 0,
        sq_error_sum: 0.0,
    };
    let mut cells = vec![vec![empty; a_edges.len() - 1]; v_edges.len() - 1];
    for (p, g) in preds.iter().zip(golds) {
        let cell = &mut cells[bin_index(v_edges, g.valence())][bin_index(a_edges, g.arousal())];
        let dv = p.valence() - g.valence();
        let da = p.arousal() - g.arousal();
        cell.count += 1;
        cell.sq_error_sum += dv * dv + da * da;
    }
    for cell in cells.iter_mut().flatten() {
        if cell.count > 0 {
            cell.rmse = Some((cell.sq_error_sum / cell.count as f64).sqrt());
        }
    }
    Ok(HeatmapGrid {
        v_edges: v_edges.to_vec(),
        a_edges: a_edges.to_vec(),
        cells,
    })
}

/// Orders predictions to match `gold` by (sentence_id, aspect_index).
/// Every gold instance needs exactly one prediction and no extras are allowed.
pub fn align_predictions(
    gold: &[AspectInstance],
    preds: &[PredictionRecord],
) -> Result<(Vec<VaPair>, Vec<VaPair>)> {
    let mut by_key = HashMap::with_capacity(preds.len());
    let mut duplicates = Vec::new();
    for p in preds {
        if by_key.insert(p.key(), p.va).is_some() {
            duplicates.push(p.key().to_string());
        }
    }
    if !duplicates.is_empty() {
        return Err(Error::Data(format!("duplicate predictions for: {}", duplicates.join(", "))));
    }
    let mut missing = Vec::new();
    let mut aligned = Vec::with_capacity(gold.len());
    let mut golds = Vec::with_capacity(gold.len());
    for g in gold {
        golds.push(g.require_gold()?);
        match by_key.remove(&g.key()) {
            Some(va) => aligned.push(va),
            None => missing.push(g.key().to_string()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Data(format!("missing predictions for: {}", missing.join(", "))));
    }
    if !by_key.is_empty() {
        let mut extra: Vec<_> = by_key.keys().map(|k| k.to_string()).collect();
        extra.sort();
        return Err(Error::Data(format!(
            "predictions for unknown instances: {}",
            extra.join(", ")
        )));
    }
    Ok((aligned, golds))
}

pub fn score_files(gold_path: &Path, pred_path: &Path) -> Result<EvalReport> {
    let gold = read_instances(gold_path)?;
    let preds = read_predictions(pred_path)?;
    let (p, g) = align_predictions(&gold, &preds)?;
    evaluate(&p, &g)
}

/// Everything `evaluate` writes: the scalar report, the heatmap, and labels
/// used by the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub method: String,
    pub dataset: String,
    pub report: EvalReport,
    pub heatmap: HeatmapGrid,
    pub heatmap_note: String,
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<14} {:>10}", "instances", self.n)?;
        writeln!(f, "{:<14} {:>10.4}", "RMSE_VA", self.rmse_va)?;
        writeln!(f, "{:<14} {:>10.4}", "RMSE_V", self.rmse_v)?;
        writeln!(f, "{:<14} {:>10.4}", "RMSE_A", self.rmse_a)?;
        writeln!(f, "{:<14} {:>10.4}", "median error", self.error_median)?;
        writeln!(f, "{:<14} {:>9.1}%", "% < 1.0", 100.0 * self.frac_below_1)?;
        write!(f, "{:<14} {:>9.1}%", "% > 2.0", 100.0 * self.frac_above_2)
    }
}

impl fmt::Display for HeatmapGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let label = |edges: &[f64], i: usize| {
            let close = if i + 2 == edges.len() { ']' } else { ')' };
            format!("[{}, {}{close}", edges[i], edges[i + 1])
        };
        write!(f, "{:<12}", "V \\ A")?;
        for j in 0..self.a_edges.len() - 1 {
            write!(f, " {:>16}", label(&self.a_edges, j))?;
        }
        // Highest valence first, like a plot with V on the vertical axis.
        for i in (0..self.v_edges.len() - 1).rev() {
            writeln!(f)?;
            write!(f, "{:<12}", label(&self.v_edges, i))?;
            for cell in &self.cells[i] {
                let text = match cell.rmse {
                    Some(r) => format!("{r:.2} (n={})", cell.count),
                    None => "- (n=0)".to_string(),
                };
                write!(f, " {text:>16}")?;
            }
        }
        Ok(())
    }
}
