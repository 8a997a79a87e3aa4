//! Per-run report JSON and the cross-run comparison table.
//!
//! Table rows are initialization methods in the order `random, ssl, ssl_A,
//! ssl_B, cssl, csfssl, ppfssl_A, ppfssl_B`, then any other method
//! alphabetically. Columns are `A_acc A_recall A_precision A_f1 A_auc` followed
//! by the same five for site B. Missing cells print as "—". The CSV carries
//! the JSON values verbatim; the text table rounds to four decimals.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use fssl_core::data::Site;
use fssl_core::eval::MetricsReport;
use serde::{Deserialize, Serialize};

use crate::commands::REPORT_FILE;
use crate::error::{CliError, Result};

pub const METHOD_ORDER: [&str; 8] = ["random", "ssl", "ssl_A", "ssl_B", "cssl", "csfssl", "ppfssl_A", "ppfssl_B"];
pub const METRIC_COLUMNS: [&str; 5] = ["acc", "recall", "precision", "f1", "auc"];
pub const MISSING: &str = "—";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneReport {
    pub method: String,
    pub site: Site,
    pub seed: u64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub acc: f64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub auc: f64,
    pub epochs_ran: usize,
}

impl FinetuneReport {
    pub fn new(method: &str, site: Site, seed: u64, m: &MetricsReport, epochs_ran: usize) -> Self {
        Self {
            method: method.to_owned(),
            site,
            seed,
            tp: m.confusion.tp,
            fp: m.confusion.fp,
            tn: m.confusion.tn,
            fn_: m.confusion.fn_,
            acc: m.metrics.acc,
            recall: m.metrics.recall,
            precision: m.metrics.precision,
            f1: m.metrics.f1,
            auc: m.auc,
            epochs_ran,
        }
    }

    pub fn values(&self) -> [f64; 5] {
        [self.acc, self.recall, self.precision, self.f1, self.auc]
    }
}

pub fn write_report(report: &FinetuneReport, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report).map_err(|source| CliError::Report {
        path: path.to_owned(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_report(path: &Path) -> Result<FinetuneReport> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| CliError::Report {
        path: path.to_owned(),
        source,
    })
}

/// Every `*/report.json` one level below `dir`, in path order.
pub fn collect_reports(dir: &Path) -> Result<Vec<FinetuneReport>> {
    let missing = || {
        CliError::MissingData(format!(
            "no reports under {}; run `fssl finetune` (or `fssl matrix`) first",
            dir.display()
        ))
    };
    let entries = match fs::read_dir(dir) {
        Ok(entries) => entries,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(missing()),
        Err(e) => return Err(CliError::io(dir, e)),
    };
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path().join(REPORT_FILE);
        if path.is_file() {
            paths.push(path);
        }
    }
    if paths.is_empty() {
        return Err(missing());
    }
    paths.sort();
    paths.iter().map(|p| read_report(p)).collect()
}

fn method_rank(method: &str) -> (usize, &str) {
    let rank = METHOD_ORDER.iter().position(|&m| m == method).unwrap_or(METHOD_ORDER.len());
    (rank, method)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportTable {
    pub header: Vec<String>,
    /// Method name, then one cell per metric column.
    pub rows: Vec<(String, Vec<Option<f64>>)>,
}

impl ReportTable {
    pub fn build(reports: &[FinetuneReport]) -> Result<Self> {
        let mut by_method: BTreeMap<(usize, &str), [Option<[f64; 5]>; 2]> = BTreeMap::new();
        for r in reports {
            let slot = &mut by_method.entry(method_rank(&r.method)).or_default()[r.site.index()];
            if slot.is_some() {
                return Err(CliError::Usage(format!(
                    "two reports for method {} on site {}",
                    r.method, r.site
                )));
            }
            *slot = Some(r.values());
        }
        let mut header = vec!["method".to_owned()];
        for site in Site::ALL {
            header.extend(METRIC_COLUMNS.iter().map(|c| format!("{site}_{c}")));
        }
        let rows = by_method
            .into_iter()
            .map(|((_, method), sites)| {
                let cells = sites
                    .iter()
                    .flat_map(|s| (0..5).map(move |k| s.map(|v| v[k])))
                    .collect();
                (method.to_owned(), cells)
            })
            .collect();
        Ok(Self { header, rows })
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for (method, cells) in &self.rows {
            out.push_str(method);
            for c in cells {
                out.push(',');
                match c {
                    Some(v) => out.push_str(&v.to_string()),
                    None => out.push_str(MISSING),
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut grid = vec![self.header.clone()];
        for (method, cells) in &self.rows {
            let mut row = vec![method.clone()];
            row.extend(cells.iter().map(|c| match c {
                Some(v) => format!("{v:.4}"),
                None => MISSING.to_owned(),
            }));
            grid.push(row);
        }
        let widths: Vec<usize> = (0..self.header.len())
            .map(|k| grid.iter().map(|r| r[k].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in &grid {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(k, (cell, &w))| {
                    let pad = " ".repeat(w - cell.chars().count());
                    if k == 0 {
                        format!("{cell}{pad}")
                    } else {
                        format!("{pad}{cell}")
                    }
                })
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}

/// Builds the table from `<root>/finetune/*/report.json` and writes
/// `report.csv` and `report.txt` into `root`.
pub fn cmd_report(root: &Path) -> Result<RenderedReport> {
    let reports = collect_reports(&root.join("finetune"))?;
    let table = ReportTable::build(&reports)?;
    let csv = table.to_csv();
    let text = table.to_text();
    for (name, body) in [("report.csv", &csv), ("report.txt", &text)] {
        let path = root.join(name);
        fs::write(&path, body).map_err(|e| CliError::io(path, e))?;
    }
    Ok(RenderedReport { table, csv, text })
}

#[derive(Clone, Debug)]
pub struct RenderedReport {
    pub table: ReportTable,
    pub csv: String,
    pub text: String,
}
