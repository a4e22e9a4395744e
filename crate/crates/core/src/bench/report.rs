//! Method-by-dataset tables over a ledger: success rate, max, mean, std and
//! Welch p-values between two named methods.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ledger::Ledger;
use crate::model::Outcome;
use crate::stats::{
    aggregate, paired_improvement, success_rate, welch_t_test, PairKey, PairedComparison,
};

pub const NOT_AVAILABLE: &str = "N/A";

/// What the harness knows about one finalized run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub dataset: String,
    pub method: String,
    pub seed: u64,
    pub outcome: Outcome,
    /// Held-out metric; absent when the run failed, was never evaluated or
    /// its evaluation failed.
    pub test_value: Option<f64>,
}

/// Summaries of all finalized runs in the ledger, in run-id order. Runs that
/// are still in progress are skipped.
pub fn collect_runs(ledger: &Ledger) -> Result<Vec<RunSummary>, crate::Error> {
    let mut runs = Vec::new();
    for run_id in ledger.list_runs()? {
        let record = ledger.load_run(&run_id)?;
        let Some(outcome) = record.outcome else {
            continue;
        };
        let test_value = ledger.load_test_metrics(&run_id)?.and_then(|m| m.value);
        runs.push(RunSummary {
            run_id,
            dataset: record.manifest.name,
            method: record.method,
            seed: record.config.seed,
            outcome,
            test_value,
        });
    }
    Ok(runs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableKind {
    SuccessRate,
    Max,
    Mean,
    Std,
    PValue,
}

impl TableKind {
    pub fn name(self) -> &'static str {
        match self {
            TableKind::SuccessRate => "success_rate",
            TableKind::Max => "max",
            TableKind::Mean => "mean",
            TableKind::Std => "std",
            TableKind::PValue => "p_value",
        }
    }
}

/// Rows are methods (or a method pair for p-values), columns are datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub kind: TableKind,
    pub rows: Vec<String>,
    pub columns: Vec<String>,
    /// `cells[row][column]`, already formatted.
    pub cells: Vec<Vec<String>>,
}

impl ReportTable {
    pub fn cell(&self, row: &str, column: &str) -> Option<&str> {
        let r = self.rows.iter().position(|x| x == row)?;
        let c = self.columns.iter().position(|x| x == column)?;
        Some(&self.cells[r][c])
    }

    /// Aligned plain text with a title line.
    pub fn to_text(&self) -> String {
        let header: Vec<&str> = std::iter::once("method")
            .chain(self.columns.iter().map(String::as_str))
            .collect();
        let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
        for (row, cells) in self.rows.iter().zip(&self.cells) {
            widths[0] = widths[0].max(row.chars().count());
            for (i, cell) in cells.iter().enumerate() {
                widths[i + 1] = widths[i + 1].max(cell.chars().count());
            }
        }
        let mut out = format!("{}\n", self.kind.name());
        let line = |fields: Vec<&str>| {
            let padded: Vec<String> = fields
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (f, w))| {
                    if i == 0 {
                        format!("{f:<w$}")
                    } else {
                        format!("{f:>w$}")
                    }
                })
                .collect();
            padded.join("  ").trim_end().to_string()
        };
        let _ = writeln!(out, "{}", line(header.clone()));
        for (row, cells) in self.rows.iter().zip(&self.cells) {
            let fields = std::iter::once(row.as_str())
                .chain(cells.iter().map(String::as_str))
                .collect();
            let _ = writeln!(out, "{}", line(fields));
        }
        out
    }

    pub fn to_csv(&self) -> Vec<u8> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        let header = std::iter::once("method").chain(self.columns.iter().map(String::as_str));
        writer
            .write_record(header)
            .expect("writing to a Vec cannot fail");
        for (row, cells) in self.rows.iter().zip(&self.cells) {
            let record = std::iter::once(row.as_str()).chain(cells.iter().map(String::as_str));
            writer
                .write_record(record)
                .expect("writing to a Vec cannot fail");
        }
        writer.into_inner().expect("flushing a Vec cannot fail")
    }

    pub fn from_csv(kind: TableKind, bytes: &[u8]) -> Result<Self, csv::Error> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(bytes);
        let columns = reader
            .headers()?
            .iter()
            .skip(1)
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        let mut cells = Vec::new();
        for record in reader.records() {
            let record = record?;
            let mut fields = record.iter().map(str::to_string);
            rows.push(fields.next().unwrap_or_default());
            cells.push(fields.collect());
        }
        Ok(Self {
            kind,
            rows,
            columns,
            cells,
        })
    }
}

/// Formats a success percentage: `100%`, `60%`, `33.3%`.
pub fn format_percent(value: f64) -> String {
    if (value - value.round()).abs() < 1e-9 {
        format!("{}%", value.round() as i64)
    } else {
        format!("{value:.1}%")
    }
}

pub fn format_metric(value: f64) -> String {
    format!("{value:.3}")
}

fn format_p(p: f64) -> String {
    if p < 0.001 {
        format!("{p:.1e}")
    } else {
        format!("{p:.3}")
    }
}

/// Builds the success-rate, max, mean and std tables, plus the p-value table
/// when a method pair is named. Method–dataset pairs without data are `N/A`.
pub fn build_tables(runs: &[RunSummary], pair: Option<(&str, &str)>) -> Vec<ReportTable> {
    let methods: Vec<String> = runs
        .iter()
        .map(|r| r.method.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let datasets: Vec<String> = runs
        .iter()
        .map(|r| r.dataset.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut outcomes: BTreeMap<(&str, &str), Vec<bool>> = BTreeMap::new();
    let mut values: BTreeMap<(&str, &str), Vec<f64>> = BTreeMap::new();
    for run in runs {
        let key = (run.method.as_str(), run.dataset.as_str());
        outcomes
            .entry(key)
            .or_default()
            .push(run.outcome == Outcome::Success);
        if let (Outcome::Success, Some(v)) = (run.outcome, run.test_value) {
            values.entry(key).or_default().push(v);
        }
    }

    let table = |kind: TableKind, cell: &dyn Fn(&str, &str) -> Option<String>| ReportTable {
        kind,
        rows: methods.clone(),
        columns: datasets.clone(),
        cells: methods
            .iter()
            .map(|m| {
                datasets
                    .iter()
                    .map(|d| cell(m, d).unwrap_or_else(|| NOT_AVAILABLE.to_string()))
                    .collect()
            })
            .collect(),
    };
    let summary = |m: &str, d: &str| values.get(&(m, d)).and_then(|v| aggregate(v).ok());

    let mut tables = vec![
        table(TableKind::SuccessRate, &|m, d| {
            outcomes
                .get(&(m, d))
                .and_then(|o| success_rate(o).ok())
                .map(format_percent)
        }),
        table(TableKind::Max, &|m, d| {
            summary(m, d).map(|a| format_metric(a.max))
        }),
        table(TableKind::Mean, &|m, d| {
            summary(m, d).map(|a| format_metric(a.mean))
        }),
        table(TableKind::Std, &|m, d| {
            summary(m, d)
                .filter(|a| a.n >= 2)
                .map(|a| format_metric(a.std))
        }),
    ];
    if let Some((a, b)) = pair {
        let cells = datasets
            .iter()
            .map(|d| {
                let left = values
                    .get(&(a, d.as_str()))
                    .map(Vec::as_slice)
                    .unwrap_or(&[]);
                let right = values
                    .get(&(b, d.as_str()))
                    .map(Vec::as_slice)
                    .unwrap_or(&[]);
                welch_t_test(left, right)
                    .map(|w| format_p(w.p_value))
                    .unwrap_or_else(|_| NOT_AVAILABLE.to_string())
            })
            .collect();
        tables.push(ReportTable {
            kind: TableKind::PValue,
            rows: vec![format!("{a} vs {b}")],
            columns: datasets.clone(),
            cells: vec![cells],
        });
    }
    tables
}

/// Pairs the test metrics of two methods by `(dataset, seed)` and compares
/// them. Slots where either side has no test metric are left out.
pub fn compare_methods(
    runs: &[RunSummary],
    with: &str,
    without: &str,
) -> Result<PairedComparison, crate::Error> {
    let slots = |method: &str| -> BTreeMap<PairKey, f64> {
        runs.iter()
            .filter(|r| r.method == method && r.outcome == Outcome::Success)
            .filter_map(|r| {
                r.test_value
                    .map(|v| ((r.dataset.clone(), r.seed as usize), v))
            })
            .collect()
    };
    let mut a = slots(with);
    let mut b = slots(without);
    a.retain(|k, _| b.contains_key(k));
    b.retain(|k, _| a.contains_key(k));
    Ok(paired_improvement(&a, &b)?)
}

/// Writes `<kind>.txt` and `<kind>.csv` per table and returns the paths.
pub fn write_report(tables: &[ReportTable], out_dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let mut paths = Vec::new();
    for table in tables {
        let txt = out_dir.join(format!("{}.txt", table.kind.name()));
        let csv = out_dir.join(format!("{}.csv", table.kind.name()));
        fs::write(&txt, table.to_text())?;
        fs::write(&csv, table.to_csv())?;
        paths.extend([txt, csv]);
    }
    Ok(paths)
}
