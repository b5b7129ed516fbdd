//! Result tables. CSV and Markdown are rendered from the same cell strings,
//! so both always show the same numbers.

use std::fs;
use std::path::{Path, PathBuf};

use super::TrialResult;
use crate::error::{Error, Result};

const HEADER: [&str; 14] = [
    "tag",
    "L",
    "H",
    "d_m",
    "FFN",
    "loss",
    "mae",
    "accuracy",
    "f1",
    "train_time_h",
    "peak_memory_mb",
    "params",
    "best",
    "error",
];

/// Metric columns with their display precision and whether larger is better.
const METRICS: [(&str, usize, bool); 7] = [
    ("loss", 4, false),
    ("mae", 4, false),
    ("accuracy", 4, true),
    ("f1", 4, true),
    ("train_time_h", 6, false),
    ("peak_memory_mb", 3, false),
    ("params", 0, false),
];

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub tag: String,
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub ffn: usize,
    /// Metric values in [`METRICS`] order, rounded to display precision;
    /// `None` for errored trials except `params`.
    pub values: [Option<f64>; 7],
    pub error: Option<String>,
}

fn round(v: f64, digits: usize) -> f64 {
    format!("{v:.digits$}").parse().expect("formatted float parses")
}

impl ReportRow {
    pub fn from_result(r: &TrialResult) -> Self {
        let mut values = [None; 7];
        if let Some(m) = &r.mean {
            let raw = [m.loss, m.mae, m.accuracy, m.f1, m.train_time_h, m.peak_memory_mb];
            for (i, v) in raw.into_iter().enumerate() {
                values[i] = Some(round(v, METRICS[i].1));
            }
        }
        values[6] = Some(r.params as f64);
        ReportRow {
            tag: r.config.tag.clone(),
            layers: r.config.hp.layers,
            heads: r.config.hp.heads,
            d_model: r.config.hp.d_model,
            ffn: r.config.hp.ffn,
            values,
            error: r.error.clone(),
        }
    }
}

/// `best[row][metric]` is true when the row attains the column optimum.
fn best_flags(rows: &[ReportRow]) -> Vec<[bool; 7]> {
    let mut flags = vec![[false; 7]; rows.len()];
    for (c, &(_, _, larger)) in METRICS.iter().enumerate() {
        let vals = rows.iter().filter_map(|r| r.values[c]);
        let best = if larger { vals.fold(f64::NEG_INFINITY, f64::max) } else { vals.fold(f64::INFINITY, f64::min) };
        for (r, row) in rows.iter().enumerate() {
            flags[r][c] = row.values[c] == Some(best);
        }
    }
    flags
}

fn cells(row: &ReportRow, best: &[bool; 7]) -> Vec<String> {
    let mut out = vec![
        row.tag.clone(),
        row.layers.to_string(),
        row.heads.to_string(),
        row.d_model.to_string(),
        row.ffn.to_string(),
    ];
    for (i, &(_, digits, _)) in METRICS.iter().enumerate() {
        out.push(row.values[i].map(|v| format!("{v:.digits$}")).unwrap_or_default());
    }
    let flagged: Vec<&str> = METRICS.iter().zip(best).filter(|(_, &b)| b).map(|(m, _)| m.0).collect();
    out.push(flagged.join(";"));
    out.push(row.error.clone().unwrap_or_default());
    out
}

pub fn render_csv(rows: &[ReportRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(HEADER).expect("in-memory write");
    for (row, best) in rows.iter().zip(best_flags(rows)) {
        w.write_record(cells(row, &best)).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

/// Best value per metric column is shown in bold.
pub fn render_markdown(rows: &[ReportRow]) -> String {
    let shown = &HEADER[..12];
    let mut s = format!("| {} |\n|{}\n", shown.join(" | "), "---|".repeat(shown.len()));
    for (row, best) in rows.iter().zip(best_flags(rows)) {
        let mut c = cells(row, &best);
        c.truncate(12);
        for (i, b) in best.iter().enumerate() {
            if *b {
                c[5 + i] = format!("**{}**", c[5 + i]);
            }
        }
        if let Some(e) = &row.error {
            c[5] = format!("error: {}", e.replace('|', "\\|"));
        }
        s.push_str(&format!("| {} |\n", c.join(" | ")));
    }
    s
}

/// Writes `csv_path` and a Markdown twin with the `.md` extension. Returns
/// the Markdown path.
pub fn emit_report(rows: &[ReportRow], csv_path: &Path) -> Result<PathBuf> {
    if let Some(dir) = csv_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(csv_path, render_csv(rows)).map_err(|e| Error::io(csv_path, e))?;
    let md = csv_path.with_extension("md");
    fs::write(&md, render_markdown(rows)).map_err(|e| Error::io(&md, e))?;
    Ok(md)
}

/// Reads rows written by [`render_csv`].
pub fn read_results_csv(path: &Path) -> Result<Vec<ReportRow>> {
    let text = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(text.as_slice());
    let bad = |offset: u64, msg: String| Error::format(path, offset, msg);
    let header = r.headers().map_err(|e| bad(0, e.to_string()))?.clone();
    if header.iter().ne(HEADER) {
        return Err(bad(0, format!("unexpected header {:?}", header.iter().collect::<Vec<_>>())));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| bad(e.position().map_or(0, |p| p.byte()), e.to_string()))?;
        let offset = rec.position().map_or(0, |p| p.byte());
        let int = |i: usize| rec[i].parse::<usize>().map_err(|e| bad(offset, format!("column {}: {e}", HEADER[i])));
        let mut values = [None; 7];
        for (k, v) in values.iter_mut().enumerate() {
            let cell = &rec[5 + k];
            if !cell.is_empty() {
                *v = Some(cell.parse::<f64>().map_err(|e| bad(offset, format!("column {}: {e}", HEADER[5 + k])))?);
            }
        }
        rows.push(ReportRow {
            tag: rec[0].to_string(),
            layers: int(1)?,
            heads: int(2)?,
            d_model: int(3)?,
            ffn: int(4)?,
            values,
            error: Some(rec[13].to_string()).filter(|e| !e.is_empty()),
        });
    }
    Ok(rows)
}
