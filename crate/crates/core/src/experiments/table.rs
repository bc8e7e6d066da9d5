use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::runner::write_atomic;
use crate::dataset::ClassLabel;
use crate::domain::Setting;
use crate::error::{Error, Result};
use crate::postprocess::{EvaluationReport, Metric};

/// One setting's fold-averaged report plus the per-fold reports behind it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultsRow {
    pub setting: Setting,
    pub report: EvaluationReport,
    pub fold_reports: Vec<EvaluationReport>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub rows: Vec<ResultsRow>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TableFormat {
    Markdown,
    Csv,
    Json,
}

impl TableFormat {
    pub fn extension(self) -> &'static str {
        match self {
            TableFormat::Markdown => "md",
            TableFormat::Csv => "csv",
            TableFormat::Json => "json",
        }
    }
}

impl FromStr for TableFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "md" | "markdown" => Ok(TableFormat::Markdown),
            "csv" => Ok(TableFormat::Csv),
            "json" => Ok(TableFormat::Json),
            other => Err(Error::InvalidConfig(format!("unknown table format `{other}`"))),
        }
    }
}

/// Column labels under each of the Precision and Recall groups.
pub const COLUMNS: [&str; 6] = ["AL", "HW", "OV", "TS", "Tri", "All"];

const SETTING_HEADER: &str = "Settings (Training domain / Testing domain)";

/// Precision then recall values in column order.
fn row_metrics(r: &EvaluationReport) -> [Metric; 12] {
    let mut out = [Metric::default(); 12];
    for (i, c) in ClassLabel::ALL.into_iter().enumerate() {
        out[i] = r.classes[c].precision;
        out[6 + i] = r.classes[c].recall;
    }
    out[5] = r.all.precision;
    out[11] = r.all.recall;
    out
}

fn fmt2(m: Metric, undefined: &str) -> String {
    m.value.map_or_else(|| undefined.to_owned(), |v| format!("{v:.2}"))
}

fn markdown(t: &ResultsTable) -> String {
    let mut s = String::new();
    let blanks = |n: usize| " |".repeat(n);
    let _ = writeln!(s, "| |Precision |{}Recall |{}", blanks(5), blanks(5));
    let _ = writeln!(s, "|---{}", "|---:".repeat(12) + "|");
    let _ = writeln!(s, "| {SETTING_HEADER} | {} | {} |", COLUMNS.join(" | "), COLUMNS.join(" | "));
    for row in &t.rows {
        let cells: Vec<String> = row_metrics(&row.report).iter().map(|m| fmt2(*m, "—")).collect();
        let _ = writeln!(s, "| {} | {} |", row.setting, cells.join(" | "));
    }

    s.push_str("\nMacro-averaged All (mean of defined per-class values):\n\n");
    s.push_str("| Setting | Precision | Recall |\n|---|---:|---:|\n");
    for row in &t.rows {
        let m = &row.report.all_macro;
        let _ = writeln!(s, "| {} | {} | {} |", row.setting, fmt2(m.precision, "—"), fmt2(m.recall, "—"));
    }

    s.push_str("\nFalse positives per class (summed over folds):\n\n");
    let _ = writeln!(s, "| Setting | {} | Total |", ClassLabel::ALL.map(|c| c.as_str()).join(" | "));
    let _ = writeln!(s, "|---{}", "|---:".repeat(6) + "|");
    for row in &t.rows {
        let fps: Vec<u64> = ClassLabel::ALL.iter().map(|&c| row.report.classes[c].counts.fp).collect();
        let cells: Vec<String> = fps.iter().map(u64::to_string).collect();
        let _ = writeln!(s, "| {} | {} | {} |", row.setting, cells.join(" | "), fps.iter().sum::<u64>());
    }
    s
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

fn csv(t: &ResultsTable) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "Settings,Precision,,,,,,Recall,,,,,");
    let _ = writeln!(s, "{},{},{}", csv_field(SETTING_HEADER), COLUMNS.join(","), COLUMNS.join(","));
    for row in &t.rows {
        let cells: Vec<String> = row_metrics(&row.report).iter().map(|m| fmt2(*m, "")).collect();
        let _ = writeln!(s, "{},{}", csv_field(&row.setting.to_string()), cells.join(","));
    }
    s
}

/// Renders the table. Markdown and CSV round to two decimals (undefined
/// values are "—" and empty respectively); JSON keeps full precision with
/// undefined values as `null`.
pub fn emit_table(t: &ResultsTable, format: TableFormat) -> String {
    match format {
        TableFormat::Markdown => markdown(t),
        TableFormat::Csv => csv(t),
        TableFormat::Json => serde_json::to_string_pretty(t).expect("table serialises") + "\n",
    }
}

pub fn write_table(t: &ResultsTable, format: TableFormat, path: &Path) -> Result<()> {
    write_atomic(path, emit_table(t, format).as_bytes())
}

pub fn read_table(path: &Path) -> Result<ResultsTable> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Parse {
        path: path.to_path_buf(),
        source,
    })
}
