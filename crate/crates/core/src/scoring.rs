//! Reconstruction-error scoring, the dataset error metric and detection accuracy.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::CellRef;

pub const DEFAULT_THRESHOLD: f64 = 0.6;
pub const DEFAULT_PRESENCE_FLOOR: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Flag {
    pub cell: CellRef,
    pub error: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnomalyReport {
    pub sample_id: u64,
    pub threshold: f64,
    /// Signed `x - x_hat`, same layout as the grid.
    pub errors: Vec<f32>,
    pub flagged: Vec<Flag>,
}

impl AnomalyReport {
    pub fn flagged_cells(&self) -> impl Iterator<Item = CellRef> + '_ {
        self.flagged.iter().map(|f| f.cell)
    }
}

/// Flags every channel with `x >= presence_floor` and `x - x_hat > threshold`.
/// `s` and `c` give the grid extents of the flat `[S, S, C]` buffers.
pub fn score(
    sample_id: u64,
    x: &[f32],
    x_hat: &[f32],
    s: usize,
    c: usize,
    presence_floor: f64,
    threshold: f64,
) -> Result<AnomalyReport> {
    if x.len() != x_hat.len() || x.len() != s * s * c {
        return Err(Error::Shape(alloc::format!(
            "score needs two {s}x{s}x{c} grids, got {} and {} values",
            x.len(),
            x_hat.len()
        )));
    }
    let errors: Vec<f32> = x.iter().zip(x_hat).map(|(a, b)| a - b).collect();
    let flagged = errors
        .iter()
        .enumerate()
        .filter(|&(i, &e)| x[i] as f64 >= presence_floor && e as f64 > threshold)
        .map(|(i, &e)| Flag { cell: CellRef::new(i / (s * c), (i / c) % s, i % c), error: e })
        .collect();
    Ok(AnomalyReport { sample_id, threshold, errors, flagged })
}

/// Sum of absolute deviations for one sample.
pub fn sample_error(x: &[f32], x_hat: &[f32]) -> f64 {
    x.iter().zip(x_hat).map(|(a, b)| num_traits::Float::abs(*a as f64 - *b as f64)).sum()
}

/// Mean over samples of the summed absolute deviation.
pub fn reconstruction_error<'a, I>(pairs: I) -> Result<f64>
where
    I: IntoIterator<Item = (&'a [f32], &'a [f32])>,
{
    let (mut total, mut n) = (0.0, 0usize);
    for (x, xh) in pairs {
        if x.len() != xh.len() {
            return Err(Error::Shape(alloc::format!("grid of {} values against reconstruction of {}", x.len(), xh.len())));
        }
        total += sample_error(x, xh);
        n += 1;
    }
    if n == 0 {
        return Err(Error::Data("reconstruction error of an empty dataset".into()));
    }
    Ok(total / n as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    /// Percentage of injected triples that were flagged.
    pub accuracy: f64,
    /// Fraction of flags that are not ground truth; 0 when nothing was flagged.
    pub false_positive_rate: f64,
    pub injected: usize,
    pub hits: usize,
    pub flags: usize,
}

/// Accuracy of a set of reports against per-sample ground truth, matched by position.
pub fn detection_accuracy(reports: &[AnomalyReport], ground_truth: &[Vec<CellRef>]) -> Result<Accuracy> {
    if reports.len() != ground_truth.len() {
        return Err(Error::Shape(alloc::format!(
            "{} reports against {} ground-truth entries",
            reports.len(),
            ground_truth.len()
        )));
    }
    let (mut injected, mut hits, mut flags, mut false_flags) = (0, 0, 0, 0);
    for (r, gt) in reports.iter().zip(ground_truth) {
        let truth: BTreeSet<CellRef> = gt.iter().copied().collect();
        let flagged: BTreeSet<CellRef> = r.flagged_cells().collect();
        injected += truth.len();
        hits += truth.intersection(&flagged).count();
        flags += flagged.len();
        false_flags += flagged.difference(&truth).count();
    }
    if injected == 0 {
        return Err(Error::Data("no injected anomalies to measure accuracy against".into()));
    }
    let false_positive_rate = if flags == 0 { 0.0 } else { false_flags as f64 / flags as f64 };
    Ok(Accuracy { accuracy: 100.0 * hits as f64 / injected as f64, false_positive_rate, injected, hits, flags })
}

/// One table row. `None` metrics mark a failed sub-run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub variant: String,
    pub reconstruction_error: Option<f64>,
    pub point_accuracy: Option<f64>,
    pub point_fpr: Option<f64>,
    pub contextual_accuracy: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub rows: Vec<SummaryRow>,
}

impl EvalSummary {
    pub fn row(&self, variant: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        use core::fmt::Write;
        let mut out = String::new();
        let _ = writeln!(out, "{:<14} {:>14} {:>16} {:>10} {:>16}", "model", "recon. error", "point acc. (%)", "point FPR", "context acc. (%)");
        for r in &self.rows {
            let cell = |v: Option<f64>, prec: usize| match v {
                Some(v) => alloc::format!("{v:.prec$}"),
                None => String::from("FAILED"),
            };
            let _ = writeln!(
                out,
                "{:<14} {:>14} {:>16} {:>10} {:>16}",
                r.variant,
                cell(r.reconstruction_error, 3),
                cell(r.point_accuracy, 1),
                cell(r.point_fpr, 3),
                cell(r.contextual_accuracy, 1)
            );
        }
        out
    }
}
