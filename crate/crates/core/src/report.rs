//! Rendering evaluation runs as tables.
//!
//! Three tables are produced: overall metrics, judge score and time per
//! question category, and judge score per waterway. Text output is aligned
//! for reading; CSV holds every aggregate at full precision in one sheet.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{Category, Waterway};
use crate::error::{Error, Result};
use crate::eval::{EvalRun, GroupAggregate};
use crate::metrics::MetricReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    #[default]
    Text,
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "text" | "txt" => Ok(ReportFormat::Text),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("unknown report format {other:?}; expected text, csv or json")),
        }
    }
}

pub fn render(run: &EvalRun, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Text => Ok(render_text(run)),
        ReportFormat::Csv => render_csv(run),
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(&serde_json::json!({
                "split": run.split,
                "overall": run.overall,
                "per_category": run.per_category,
                "per_waterway": run.per_waterway,
                "latency": run.latency,
            }))?;
            s.push('\n');
            Ok(s)
        }
    }
}

const NA: &str = "n/a";
const EMPTY: &str = "-";

fn cell(v: Option<f64>, decimals: usize) -> String {
    v.map_or_else(|| NA.to_string(), |x| format!("{x:.decimals$}"))
}

/// Aligned table; the first `labels` columns are left-aligned, the rest right.
fn table(header: &[&str], labels: usize, rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: Vec<&str>| -> String {
        let mut out = String::new();
        for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
            if i == 0 {
                let _ = write!(out, "{c:<w$}");
            } else if i < labels {
                let _ = write!(out, "  {c:<w$}");
            } else {
                let _ = write!(out, "  {c:>w$}");
            }
        }
        out.trim_end().to_string() + "\n"
    };
    let mut out = line(header.to_vec());
    let total: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
    out += &"-".repeat(total);
    out.push('\n');
    for row in rows {
        out += &line(row.iter().map(String::as_str).collect());
    }
    out
}

fn judge_cell(g: &GroupAggregate) -> String {
    match &g.metrics {
        None => EMPTY.to_string(),
        Some(m) => cell(m.judge_score, 3),
    }
}

fn time_cell(g: &GroupAggregate) -> String {
    g.mean_latency_s.map_or_else(|| EMPTY.to_string(), |t| format!("{t:.2}"))
}

pub fn render_text(run: &EvalRun) -> String {
    let mut out = String::new();
    let o = &run.overall;
    let _ = writeln!(
        out,
        "Overall metrics ({} split, {} of {} samples scored)\n",
        run.split, o.scored, o.count
    );
    let mut header = vec!["Split"];
    header.extend(MetricReport::COLUMNS);
    let mut row = vec![run.split.to_string()];
    match &o.metrics {
        Some(m) => row.extend(m.values().iter().map(|v| cell(*v, 4))),
        None => row.extend(std::iter::repeat_n(EMPTY.to_string(), MetricReport::COLUMNS.len())),
    }
    out += &table(&header, 1, &[row]);

    out += "\nJudge score and time per question category (Time(s): mean end-to-end seconds per question)\n\n";
    let rows: Vec<Vec<String>> = Category::TABLE_ORDER
        .iter()
        .map(|c| {
            let g = &run.per_category[c];
            vec![
                c.letter().to_string(),
                c.as_str().to_string(),
                g.count.to_string(),
                g.scored.to_string(),
                judge_cell(g),
                time_cell(g),
            ]
        })
        .collect();
    out += &table(&["Code", "Category", "N", "Scored", "Judge", "Time(s)"], 2, &rows);

    out += "\nJudge score per waterway\n\n";
    let rows: Vec<Vec<String>> = Waterway::ALL
        .iter()
        .map(|w| {
            let g = &run.per_waterway[w];
            vec![w.as_str().to_string(), g.count.to_string(), g.scored.to_string(), judge_cell(g), time_cell(g)]
        })
        .collect();
    out += &table(&["Waterway", "N", "Scored", "Judge", "Time(s)"], 1, &rows);

    if let Some(l) = &run.latency {
        let _ = write!(
            out,
            "\nLatency per question (s): mean {:.2}, median {:.2}, min {:.2}, max {:.2} over {} questions\n",
            l.mean_s, l.median_s, l.min_s, l.max_s, l.count
        );
    }
    let failed = run.overall.count - run.overall.scored;
    if failed > 0 {
        let _ = writeln!(out, "Failed samples: {failed}");
    }
    out
}

/// One CSV line: a group of one of the three tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub table: String,
    pub group: String,
    pub count: usize,
    pub scored: usize,
    pub rouge1: Option<f64>,
    pub rouge2: Option<f64>,
    #[serde(rename = "rougeL")]
    pub rouge_l: Option<f64>,
    pub bleu1: Option<f64>,
    pub bleu2: Option<f64>,
    pub bleu3: Option<f64>,
    pub bleu4: Option<f64>,
    pub meteor: Option<f64>,
    pub cider: Option<f64>,
    pub judge_score: Option<f64>,
    pub time_s: Option<f64>,
}

impl CsvRow {
    fn new(table: &str, group: &str, g: &GroupAggregate) -> Self {
        let m = g.metrics.as_ref();
        Self {
            table: table.into(),
            group: group.into(),
            count: g.count,
            scored: g.scored,
            rouge1: m.map(|m| m.rouge1),
            rouge2: m.map(|m| m.rouge2),
            rouge_l: m.map(|m| m.rouge_l),
            bleu1: m.map(|m| m.bleu1),
            bleu2: m.map(|m| m.bleu2),
            bleu3: m.map(|m| m.bleu3),
            bleu4: m.map(|m| m.bleu4),
            meteor: m.map(|m| m.meteor),
            cider: m.map(|m| m.cider),
            judge_score: m.and_then(|m| m.judge_score),
            time_s: g.mean_latency_s,
        }
    }

    /// The aggregate this row was rendered from.
    pub fn to_group(&self) -> GroupAggregate {
        let metrics = self.rouge1.map(|rouge1| MetricReport {
            rouge1,
            rouge2: self.rouge2.unwrap_or_default(),
            rouge_l: self.rouge_l.unwrap_or_default(),
            bleu1: self.bleu1.unwrap_or_default(),
            bleu2: self.bleu2.unwrap_or_default(),
            bleu3: self.bleu3.unwrap_or_default(),
            bleu4: self.bleu4.unwrap_or_default(),
            meteor: self.meteor.unwrap_or_default(),
            cider: self.cider.unwrap_or_default(),
            judge_score: self.judge_score,
        });
        GroupAggregate {
            count: self.count,
            scored: self.scored,
            metrics,
            mean_latency_s: self.time_s,
        }
    }
}

pub fn csv_rows(run: &EvalRun) -> Vec<CsvRow> {
    let mut rows = vec![CsvRow::new("overall", &run.split.to_string(), &run.overall)];
    rows.extend(
        Category::TABLE_ORDER
            .iter()
            .map(|c| CsvRow::new("category", c.as_str(), &run.per_category[c])),
    );
    rows.extend(Waterway::ALL.iter().map(|w| CsvRow::new("waterway", w.as_str(), &run.per_waterway[w])));
    rows
}

pub fn render_csv(run: &EvalRun) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in csv_rows(run) {
        w.serialize(row).map_err(|e| Error::InvalidState(format!("csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidState(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidState(format!("csv: {e}")))
}

pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::invalid(format!("csv: {e}")))
}
