//! Sweep reports, the best-λ table and CSV matrices.

use std::fmt::Write;

use after_core::analysis::Matrix;
use after_core::training::{MeanStd, SweepResult};
use serde::{Deserialize, Serialize};

/// A sweep of one Main/Auxiliary pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub main: String,
    pub aux: String,
    pub sweep: SweepResult,
}

fn push_row(out: &mut String, cells: &[String], widths: &[usize]) {
    out.push('|');
    for (c, w) in cells.iter().zip(widths) {
        let _ = write!(out, " {c:<w$} |");
    }
    out.push('\n');
}

fn render(header: &[String], rows: &[Vec<String>]) -> String {
    let width = |s: &String| s.chars().count();
    let mut widths: Vec<usize> = header.iter().map(width).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(width(c));
        }
    }
    let mut out = String::new();
    push_row(&mut out, header, &widths);
    out.push('|');
    for w in &widths {
        let _ = write!(out, "{}|", "-".repeat(w + 2));
    }
    out.push('\n');
    for r in rows {
        push_row(&mut out, r, &widths);
    }
    out
}

/// Best λ per pair: one row per Auxiliary dataset, one column per Main task,
/// in first-seen order. Missing pairs and all-failed sweeps show `-`.
pub fn best_lambda_table(reports: &[SweepReport]) -> String {
    let mut auxes: Vec<&str> = Vec::new();
    let mut mains: Vec<&str> = Vec::new();
    for r in reports {
        if !auxes.contains(&r.aux.as_str()) {
            auxes.push(&r.aux);
        }
        if !mains.contains(&r.main.as_str()) {
            mains.push(&r.main);
        }
    }
    let mut header = vec!["Auxiliary".to_string()];
    header.extend(mains.iter().map(|m| m.to_string()));
    let rows: Vec<Vec<String>> = auxes
        .iter()
        .map(|&a| {
            let mut row = vec![a.to_string()];
            for &m in &mains {
                let cell = reports
                    .iter()
                    .rev()
                    .find(|r| r.aux == a && r.main == m)
                    .and_then(|r| r.sweep.best_lambda)
                    .map_or_else(|| "-".to_string(), |l| l.to_string());
                row.push(cell);
            }
            row
        })
        .collect();
    render(&header, &rows)
}

fn pm(s: MeanStd) -> String {
    format!("{:.4} ± {:.4}", s.mean, s.std)
}

/// Per-λ validation and test aggregates (mean ± sample std over seeds).
pub fn aggregate_table(report: &SweepReport) -> String {
    let header: Vec<String> = ["lambda", "runs", "failed", "val_loss", "val_acc", "val_f1", "val_mcc", "test_acc", "test_f1", "test_mcc"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows: Vec<Vec<String>> = report
        .sweep
        .per_lambda
        .iter()
        .map(|s| {
            let mut row = vec![s.lambda.to_string()];
            match &s.aggregate {
                Some(a) => {
                    row.push(a.runs.to_string());
                    row.push(s.failed.to_string());
                    row.extend([pm(a.val_loss), pm(a.val.accuracy), pm(a.val.f1), pm(a.val.mcc)]);
                    match &a.test {
                        Some(t) => row.extend([pm(t.accuracy), pm(t.f1), pm(t.mcc)]),
                        None => row.extend(["-".to_string(), "-".to_string(), "-".to_string()]),
                    }
                }
                None => {
                    row.push("0".to_string());
                    row.push(s.failed.to_string());
                    row.extend(std::iter::repeat_n("-".to_string(), 7));
                }
            }
            row
        })
        .collect();
    render(&header, &rows)
}

/// The text written to a sweep's `table.txt`.
pub fn sweep_table_text(report: &SweepReport) -> String {
    format!(
        "Best lambda (mode {}, selected by mean validation {})\n\n{}\nPer-lambda aggregates over seeds {:?}\n\n{}",
        serde_json::to_value(report.sweep.mode).unwrap_or_default().as_str().unwrap_or("?"),
        serde_json::to_value(report.sweep.selection_metric).unwrap_or_default().as_str().unwrap_or("?"),
        best_lambda_table(std::slice::from_ref(report)),
        report.sweep.seeds,
        aggregate_table(report)
    )
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// CSV with a header row of column names and one row per matrix row.
pub fn matrix_csv(m: &Matrix) -> String {
    let mut out = String::from("name");
    for c in &m.cols {
        out.push(',');
        out.push_str(&csv_field(c));
    }
    out.push('\n');
    for (name, vals) in m.rows.iter().zip(&m.values) {
        out.push_str(&csv_field(name));
        for v in vals {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}
