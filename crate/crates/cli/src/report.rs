//! Evaluation and cost reports in CSV, JSON and plain-text table form.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use relocl_core::experiment::{
    efficiency_report, LedgerRow, MetricsReport, OutcomeCounts, RetentionMatrix, Strategy,
};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Header of the metrics CSV.
pub const METRICS_COLUMNS: [&str; 8] = [
    "strategy",
    "trained_through",
    "test_dataset",
    "moved_correct",
    "moved_wrong",
    "moved_missed",
    "unmoved_correct",
    "unmoved_wrong",
];

/// Header of the ledger CSV.
pub const LEDGER_COLUMNS: [&str; 5] = [
    "session",
    "training_samples",
    "steps",
    "cpu_seconds",
    "buffer_size",
];

/// One evaluation: a model trained through session `trained_through`,
/// scored on the test partition of dataset `test_dataset`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsRow {
    pub strategy: Strategy,
    pub seed: u64,
    pub trained_through: usize,
    pub test_dataset: usize,
    pub dataset_name: String,
    pub pairs: usize,
    pub counts: OutcomeCounts,
}

impl MetricsRow {
    pub fn from_report(
        strategy: Strategy,
        seed: u64,
        trained_through: usize,
        test_dataset: usize,
        r: &MetricsReport,
    ) -> Self {
        Self {
            strategy,
            seed,
            trained_through,
            test_dataset,
            dataset_name: r.dataset.clone(),
            pairs: r.pairs,
            counts: r.counts,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsFile {
    pub delta: u64,
    pub rows: Vec<MetricsRow>,
}

pub fn metrics_csv(rows: &[MetricsRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(METRICS_COLUMNS).map_err(csv_err)?;
    for r in rows {
        let p = r.counts.percentages();
        w.write_record([
            r.strategy.as_str().to_string(),
            r.trained_through.to_string(),
            r.test_dataset.to_string(),
            format!("{:.2}", p.moved_correct),
            format!("{:.2}", p.moved_wrong),
            format!("{:.2}", p.moved_missed),
            format!("{:.2}", p.unmoved_correct),
            format!("{:.2}", p.unmoved_wrong),
        ])
        .map_err(csv_err)?;
    }
    finish(w)
}

pub fn metrics_json(file: &MetricsFile) -> Result<String> {
    let mut s = serde_json::to_string_pretty(file).map_err(|e| CliError::Runtime(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn parse_metrics_json(text: &str) -> Result<MetricsFile> {
    serde_json::from_str(text).map_err(|e| CliError::Data(format!("metrics file: {e}")))
}

pub fn ledger_csv(rows: &[LedgerRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(LEDGER_COLUMNS).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.session.to_string(),
            r.training_samples.to_string(),
            r.steps.to_string(),
            format!("{:.6}", r.cpu_seconds),
            r.buffer_size.to_string(),
        ])
        .map_err(csv_err)?;
    }
    finish(w)
}

pub fn parse_ledger_csv(text: &str) -> Result<Vec<LedgerRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let headers = r.headers().map_err(data_csv)?.clone();
    if headers.iter().ne(LEDGER_COLUMNS) {
        return Err(CliError::Data(format!(
            "unexpected ledger columns {headers:?}"
        )));
    }
    r.records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec.map_err(data_csv)?;
            let field = |j: usize| -> Result<&str> { Ok(&rec[j]) };
            let bad = |e: String| CliError::Data(format!("ledger line {}: {e}", i + 2));
            Ok(LedgerRow {
                session: field(0)?.parse().map_err(|e| bad(format!("{e}")))?,
                training_samples: field(1)?.parse().map_err(|e| bad(format!("{e}")))?,
                steps: field(2)?.parse().map_err(|e| bad(format!("{e}")))?,
                cpu_seconds: field(3)?.parse().map_err(|e| bad(format!("{e}")))?,
                buffer_size: field(4)?.parse().map_err(|e| bad(format!("{e}")))?,
            })
        })
        .collect()
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Runtime(e.to_string())
}

fn data_csv(e: csv::Error) -> CliError {
    CliError::Data(e.to_string())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Runtime(e.to_string()))
}

/// Rows of one (strategy, seed) run keyed by (trained_through, test_dataset).
type RunCells<'a> = BTreeMap<(usize, usize), &'a MetricsRow>;

/// Groups metric rows into one retention matrix per (strategy, seed). Only
/// complete lower-triangular prefixes are returned.
pub fn retention_matrices(rows: &[MetricsRow]) -> Vec<(u64, RetentionMatrix)> {
    let mut groups: BTreeMap<(Strategy, u64), RunCells> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.strategy, r.seed))
            .or_default()
            .insert((r.trained_through, r.test_dataset), r);
    }
    groups
        .into_iter()
        .map(|((strategy, seed), cells)| {
            let mut matrix_rows = Vec::new();
            'outer: for k in 0.. {
                let mut row = Vec::with_capacity(k + 1);
                for j in 0..=k {
                    match cells.get(&(k, j)) {
                        Some(r) => row.push(MetricsReport::new(
                            r.dataset_name.clone(),
                            r.pairs,
                            r.counts,
                        )),
                        None => break 'outer,
                    }
                }
                matrix_rows.push(row);
            }
            (
                seed,
                RetentionMatrix {
                    strategy,
                    rows: matrix_rows,
                },
            )
        })
        .collect()
}

/// Lower-triangular Moved Correct table: one line per finished session,
/// one column per dataset.
pub fn retention_table(title: &str, m: &RetentionMatrix) -> String {
    let n = m.rows.len();
    let mut s = format!("{title}\n");
    let _ = write!(s, "{:<14}", "trained on");
    for j in 0..n {
        let _ = write!(s, "{:>9}", format!("D{j}"));
    }
    s.push('\n');
    for (k, row) in m.rows.iter().enumerate() {
        let label = (0..=k)
            .map(|j| format!("D{j}"))
            .collect::<Vec<_>>()
            .join("+");
        let _ = write!(s, "{label:<14}");
        for r in row {
            let _ = write!(s, "{:>9.2}", r.percentages.moved_correct);
        }
        s.push('\n');
    }
    s
}

/// Text summary: a retention table per run, then per-strategy means of the
/// retention metric and of new-task accuracy.
pub fn summary_text(rows: &[MetricsRow]) -> String {
    let matrices = retention_matrices(rows);
    let mut s = String::new();
    for (seed, m) in &matrices {
        s.push_str(&retention_table(
            &format!("{} (seed {seed}): Moved Correct %", m.strategy),
            m,
        ));
        s.push('\n');
    }
    let mut by_strategy: BTreeMap<Strategy, Vec<&RetentionMatrix>> = BTreeMap::new();
    for (_, m) in &matrices {
        by_strategy.entry(m.strategy).or_default().push(m);
    }
    let _ = writeln!(
        s,
        "{:<10} {:>6} {:>10}  new-task Moved Correct per session",
        "strategy", "runs", "retention"
    );
    for (strategy, ms) in by_strategy {
        let retention: Vec<f64> = ms.iter().filter_map(|m| m.retention()).collect();
        let mean = retention.iter().sum::<f64>() / retention.len().max(1) as f64;
        let sessions = ms.iter().map(|m| m.rows.len()).min().unwrap_or(0);
        let diag: Vec<String> = (0..sessions)
            .map(|k| {
                let v: f64 = ms.iter().filter_map(|m| m.cell(k, k)).sum::<f64>() / ms.len() as f64;
                format!("{v:.2}")
            })
            .collect();
        let _ = writeln!(
            s,
            "{:<10} {:>6} {:>10.2}  {}",
            strategy.as_str(),
            ms.len(),
            mean,
            diag.join(" ")
        );
    }
    s
}

/// Per-session cost table with totals.
pub fn efficiency_text(name: &str, ledger: &[LedgerRow]) -> String {
    let e = efficiency_report(ledger);
    let mut s = format!(
        "{name}\n{:<8} {:>9} {:>9} {:>12} {:>8}\n",
        "session", "samples", "steps", "cpu seconds", "buffer"
    );
    for r in &e.rows {
        let _ = writeln!(
            s,
            "{:<8} {:>9} {:>9} {:>12.3} {:>8}",
            r.session, r.training_samples, r.steps, r.cpu_seconds, r.buffer_size
        );
    }
    let _ = writeln!(
        s,
        "{:<8} {:>9} {:>9} {:>12.3}",
        "total", e.total_samples, "", e.total_cpu_seconds
    );
    s
}
