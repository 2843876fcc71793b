//! Benchmark tables: aggregates per-run, per-architecture metrics into
//! the mean+-std grid used throughout the results section, marks the
//! best architecture per dataset, and renders a text table plus a CSV
//! with identical numeric content.
//!
//! All MSE cells are printed scaled by 1e-5 with two decimals, so a
//! stored mean of 4.90e-5 renders as "4.90".

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Quantity;
use crate::models::ModelKind;
use crate::train::RunMetrics;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("report has no rows")]
    EmptyReport,
    #[error("malformed report: {detail}")]
    Shape { detail: String },
    #[error("inconsistent report: {detail}")]
    Inconsistent { detail: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Evaluation protocol the metrics came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Specialised,
    Generalised,
}

impl Protocol {
    pub fn label(self) -> &'static str {
        match self {
            Protocol::Specialised => "specialised",
            Protocol::Generalised => "generalised",
        }
    }
}

/// Architecture column order of the results tables.
pub const TABLE_ORDER: [ModelKind; 6] = [
    ModelKind::Rnn,
    ModelKind::Gru,
    ModelKind::Lstm,
    ModelKind::BiLstm,
    ModelKind::Transformer,
    ModelKind::Tcn,
];

/// One run x architecture cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    pub metrics: RunMetrics,
    /// Set by [`mark_best`]; rendered as a leading `*`.
    pub best: bool,
}

/// One dataset's metrics across all architectures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub run_id: String,
    /// Parallel to [`BenchmarkReport::architectures`].
    pub cells: Vec<ReportCell>,
}

/// Per-architecture column average: mean of row means, mean of row stds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AverageCell {
    pub mse_mean: f64,
    pub mse_std: f64,
    pub best: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub protocol: Protocol,
    pub quantity: Quantity,
    pub architectures: Vec<ModelKind>,
    pub rows: Vec<ReportRow>,
    /// Parallel to `architectures`; empty while `rows` is empty.
    pub averages: Vec<AverageCell>,
}

impl BenchmarkReport {
    /// Builds an unmarked report. `rows` holds one metrics vector per
    /// run, each parallel to `architectures`. Averages are computed
    /// here; call [`mark_best`] to set the best markers.
    pub fn new(
        protocol: Protocol,
        quantity: Quantity,
        architectures: Vec<ModelKind>,
        rows: Vec<(String, Vec<RunMetrics>)>,
    ) -> Result<Self, ReportError> {
        if architectures.is_empty() {
            return Err(ReportError::Shape {
                detail: "report needs at least one architecture".into(),
            });
        }
        for (run_id, metrics) in &rows {
            if metrics.len() != architectures.len() {
                return Err(ReportError::Shape {
                    detail: format!(
                        "row {run_id:?} has {} cells for {} architectures",
                        metrics.len(),
                        architectures.len()
                    ),
                });
            }
            for (kind, m) in architectures.iter().zip(metrics) {
                if !m.mse_mean.is_finite()
                    || !m.mse_std.is_finite()
                    || m.mse_mean < 0.0
                    || m.mse_std < 0.0
                {
                    return Err(ReportError::Shape {
                        detail: format!(
                            "row {run_id:?}, {}: mse {} +- {} is not a valid metric",
                            kind.label(),
                            m.mse_mean,
                            m.mse_std
                        ),
                    });
                }
            }
        }
        let rows: Vec<ReportRow> = rows
            .into_iter()
            .map(|(run_id, metrics)| ReportRow {
                run_id,
                cells: metrics
                    .into_iter()
                    .map(|metrics| ReportCell {
                        metrics,
                        best: false,
                    })
                    .collect(),
            })
            .collect();
        let averages = column_averages(&architectures, &rows);
        Ok(Self {
            protocol,
            quantity,
            architectures,
            rows,
            averages,
        })
    }

    /// Checks the stored invariants: averages recompute from the rows
    /// to 1e-12, and any best markers sit exactly on the minimal-mean
    /// cells of their row.
    pub fn validate(&self) -> Result<(), ReportError> {
        for row in &self.rows {
            if row.cells.len() != self.architectures.len() {
                return Err(ReportError::Shape {
                    detail: format!("row {:?} width drifted", row.run_id),
                });
            }
        }
        let expected = column_averages(&self.architectures, &self.rows);
        if expected.len() != self.averages.len() {
            return Err(ReportError::Inconsistent {
                detail: "average row width drifted".into(),
            });
        }
        for (kind, (got, want)) in self
            .architectures
            .iter()
            .zip(self.averages.iter().zip(&expected))
        {
            if (got.mse_mean - want.mse_mean).abs() > 1e-12
                || (got.mse_std - want.mse_std).abs() > 1e-12
            {
                return Err(ReportError::Inconsistent {
                    detail: format!(
                        "{} average {}+-{} does not recompute from the rows",
                        kind.label(),
                        got.mse_mean,
                        got.mse_std
                    ),
                });
            }
        }
        for row in &self.rows {
            if row.cells.iter().any(|c| c.best) {
                let min = row_min(&row.cells);
                for cell in &row.cells {
                    if cell.best != (cell.metrics.mse_mean == min) {
                        return Err(ReportError::Inconsistent {
                            detail: format!(
                                "row {:?}: best markers disagree with the row minimum",
                                row.run_id
                            ),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// True when any row (or the average row) has tied best markers.
    pub fn has_ties(&self) -> bool {
        let tied = |bests: usize| bests > 1;
        self.rows
            .iter()
            .map(|row| row.cells.iter().filter(|c| c.best).count())
            .chain(std::iter::once(
                self.averages.iter().filter(|c| c.best).count(),
            ))
            .any(tied)
    }
}

fn column_averages(architectures: &[ModelKind], rows: &[ReportRow]) -> Vec<AverageCell> {
    if rows.is_empty() {
        return Vec::new();
    }
    let n = rows.len() as f64;
    (0..architectures.len())
        .map(|c| AverageCell {
            mse_mean: rows.iter().map(|r| r.cells[c].metrics.mse_mean).sum::<f64>() / n,
            mse_std: rows.iter().map(|r| r.cells[c].metrics.mse_std).sum::<f64>() / n,
            best: false,
        })
        .collect()
}

fn row_min(cells: &[ReportCell]) -> f64 {
    cells
        .iter()
        .map(|c| c.metrics.mse_mean)
        .fold(f64::INFINITY, f64::min)
}

/// Marks the minimal-mean cell of every row, and of the average row.
/// Exact ties are all marked; [`render`] then adds a tie note.
/// The marking depends only on the ordering of the means, so scaling
/// every cell by the same positive factor leaves it unchanged.
pub fn mark_best(mut report: BenchmarkReport) -> BenchmarkReport {
    for row in &mut report.rows {
        let min = row_min(&row.cells);
        for cell in &mut row.cells {
            cell.best = cell.metrics.mse_mean == min;
        }
    }
    let min = report
        .averages
        .iter()
        .map(|c| c.mse_mean)
        .fold(f64::INFINITY, f64::min);
    for cell in &mut report.averages {
        cell.best = cell.mse_mean == min;
    }
    report
}

/// Formats one cell: mean and std scaled by 1e-5, two decimals.
pub fn format_mse(mse_mean: f64, mse_std: f64) -> String {
    format!("{:.2}\u{b1}{:.2}", mse_mean * 1e5, mse_std * 1e5)
}

/// Rendered report: human-readable table and machine-readable CSV
/// carrying the same numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    pub text: String,
    pub csv: String,
}

impl Rendered {
    pub fn save(
        &self,
        text_path: impl AsRef<Path>,
        csv_path: impl AsRef<Path>,
    ) -> Result<(), ReportError> {
        std::fs::write(text_path, &self.text)?;
        std::fs::write(csv_path, &self.csv)?;
        Ok(())
    }
}

fn uniform_repeats(report: &BenchmarkReport) -> Option<usize> {
    let mut counts = report
        .rows
        .iter()
        .flat_map(|r| r.cells.iter().map(|c| c.metrics.n_repeats));
    let first = counts.next()?;
    counts.all(|n| n == first).then_some(first)
}

/// Renders the benchmark grid. Pure in the report: rendering twice
/// yields byte-identical output.
pub fn render(report: &BenchmarkReport) -> Result<Rendered, ReportError> {
    if report.rows.is_empty() {
        return Err(ReportError::EmptyReport);
    }
    report.validate()?;

    let labels: Vec<&str> = report.architectures.iter().map(|k| k.label()).collect();
    let format_marked = |best: bool, mean: f64, std: f64| {
        let cell = format_mse(mean, std);
        if best {
            format!("*{cell}")
        } else {
            cell
        }
    };

    // Grid of display strings: header, data rows, average row.
    let mut grid: Vec<Vec<String>> = Vec::with_capacity(report.rows.len() + 2);
    let mut header = vec!["Dataset".to_string()];
    header.extend(labels.iter().map(|l| l.to_string()));
    grid.push(header);
    for row in &report.rows {
        let mut line = vec![row.run_id.clone()];
        line.extend(
            row.cells
                .iter()
                .map(|c| format_marked(c.best, c.metrics.mse_mean, c.metrics.mse_std)),
        );
        grid.push(line);
    }
    let mut avg = vec!["Average".to_string()];
    avg.extend(
        report
            .averages
            .iter()
            .map(|c| format_marked(c.best, c.mse_mean, c.mse_std)),
    );
    grid.push(avg);

    let widths: Vec<usize> = (0..grid[0].len())
        .map(|c| grid.iter().map(|row| row[c].chars().count()).max().unwrap_or(0))
        .collect();

    let mut text = String::new();
    let _ = writeln!(
        text,
        "{} {} prediction benchmark",
        capitalise(report.protocol.label()),
        report.quantity
    );
    match uniform_repeats(report) {
        Some(n) => {
            let _ = writeln!(
                text,
                "MSE\u{b1}std scaled by 1e-5, averaged over {n} repeats."
            );
        }
        None => {
            let _ = writeln!(text, "MSE\u{b1}std scaled by 1e-5.");
        }
    }
    let _ = writeln!(text, "Best architecture per dataset marked with *.");
    if report.has_ties() {
        let _ = writeln!(text, "Tied minima are all marked.");
    }
    text.push('\n');
    let rule_at = [1, grid.len() - 1];
    let rule: String = widths
        .iter()
        .map(|w| "-".repeat(*w))
        .collect::<Vec<_>>()
        .join("--");
    for (i, row) in grid.iter().enumerate() {
        if rule_at.contains(&i) {
            let _ = writeln!(text, "{rule}");
        }
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(cell, w)| format!("{cell:<width$}", width = w))
            .collect();
        let _ = writeln!(text, "{}", line.join("  ").trim_end());
    }

    let mut csv = String::from(
        "protocol,quantity,dataset,architecture,mse_mean_x1e5,mse_std_x1e5,best\n",
    );
    let push_cell =
        |csv: &mut String, dataset: &str, label: &str, best: bool, mean: f64, std: f64| {
            let _ = writeln!(
                csv,
                "{},{},{},{},{:.2},{:.2},{}",
                report.protocol.label(),
                report.quantity,
                dataset,
                label,
                mean * 1e5,
                std * 1e5,
                best
            );
        };
    for row in &report.rows {
        for (label, cell) in labels.iter().zip(&row.cells) {
            push_cell(
                &mut csv,
                &row.run_id,
                label,
                cell.best,
                cell.metrics.mse_mean,
                cell.metrics.mse_std,
            );
        }
    }
    for (label, cell) in labels.iter().zip(&report.averages) {
        push_cell(&mut csv, "Average", label, cell.best, cell.mse_mean, cell.mse_std);
    }

    Ok(Rendered { text, csv })
}

fn capitalise(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().collect::<String>() + chars.as_str(),
        None => String::new(),
    }
}
