//! Report rendering: aligned text table, CSV, and JSON.
//!
//! Rendering is a pure function of its input. Numbers in the table and CSV
//! formats carry six decimals; a `*` marks results with p below the
//! threshold they were evaluated with.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{EffectSize, Experiment, Granularity, PMethod, TestResult, ZERO_VARIANCE_LABEL};
use crate::suite::{CellError, SuiteOutcome};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub enum ReportFormat {
    #[default]
    Table,
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table" | "table-text" | "text" => Ok(ReportFormat::Table),
            "csv" => Ok(ReportFormat::Csv),
            "json" | "structured-text" => Ok(ReportFormat::Json),
            _ => Err(Error::InvalidConfig(format!(
                "unknown report format {s:?} (expected table|csv|json)"
            ))),
        }
    }
}

pub const SIGNIFICANCE_MARKER: &str = "*";

pub const COLUMNS: [&str; 11] = [
    "test",
    "experiment",
    "granularity",
    "statistic",
    "effect_size",
    "p_value",
    "method",
    "n_permutations",
    "seed",
    "significant",
    "warnings",
];

/// Conventions every report states, since they are not fixed by the
/// underlying method definitions.
pub fn conventions(outcome: &SuiteOutcome) -> Vec<String> {
    vec![
        format!(
            "effect size denominator: {} standard deviation",
            outcome.stddev.as_str()
        ),
        "targets grounded on several images: mean vector per target concept".into(),
        "E2 effect size: per-target own-category associations; E3 effect size: half the summed |mean delta| over stddev of all deltas".into(),
        "permutation: size-preserving partitions of targets; E2 targets keep their own category's image groups, E3 targets take the image-group roles of the position they occupy".into(),
        "p-value: one-sided; exact counts the observed partition, Monte Carlo adds one pseudo-count".into(),
        format!("significance: p < {}", outcome.alpha),
    ]
}

fn fixed(v: f64) -> String {
    let s = format!("{v:.6}");
    if s == "-0.000000" {
        "0.000000".into()
    } else {
        s
    }
}

fn effect_cell(e: EffectSize) -> String {
    match e {
        EffectSize::Value(v) => fixed(v),
        EffectSize::ZeroVariance => ZERO_VARIANCE_LABEL.into(),
    }
}

fn row(r: &TestResult) -> [String; 11] {
    [
        r.test_name.clone(),
        r.experiment.to_string(),
        r.granularity.to_string(),
        fixed(r.statistic),
        effect_cell(r.effect_size),
        fixed(r.p_value),
        r.p_method.to_string(),
        r.n_permutations.to_string(),
        r.seed.map(|s| s.to_string()).unwrap_or_default(),
        if r.significant { SIGNIFICANCE_MARKER.into() } else { String::new() },
        r.warnings.join("; "),
    ]
}

fn error_line(e: &CellError) -> String {
    let mut s = format!("test={}", e.test);
    if let Some(x) = e.experiment {
        let _ = write!(s, " experiment={x}");
    }
    if let Some(g) = e.granularity {
        let _ = write!(s, " granularity={g}");
    }
    let _ = write!(s, " exit={} {}", e.exit_code, e.message);
    s
}

fn render_table(outcome: &SuiteOutcome) -> String {
    let rows: Vec<[String; 11]> = outcome.results.iter().map(row).collect();
    let mut widths = COLUMNS.map(str::len);
    for r in &rows {
        for (w, cell) in widths.iter_mut().zip(r) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    for c in conventions(outcome) {
        let _ = writeln!(out, "# {c}");
    }
    let line = |cells: &[String], out: &mut String| {
        let padded: Vec<String> = cells
            .iter()
            .zip(widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        let _ = writeln!(out, "{}", padded.join("  ").trim_end());
    };
    line(&COLUMNS.map(String::from), &mut out);
    for r in &rows {
        line(r, &mut out);
    }
    if !outcome.errors.is_empty() {
        let _ = writeln!(out, "errors:");
        for e in &outcome.errors {
            let _ = writeln!(out, "  {}", error_line(e));
        }
    }
    out
}

fn render_csv(outcome: &SuiteOutcome) -> String {
    let mut out = String::new();
    for c in conventions(outcome) {
        let _ = writeln!(out, "# {c}");
    }
    for e in &outcome.errors {
        let _ = writeln!(out, "# error: {}", error_line(e));
    }
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    w.write_record(COLUMNS).expect("in-memory write");
    for r in &outcome.results {
        w.write_record(row(r)).expect("in-memory write");
    }
    let body = w.into_inner().expect("in-memory flush");
    out.push_str(std::str::from_utf8(&body).expect("CSV of UTF-8 fields"));
    out
}

#[derive(Serialize)]
struct JsonReport<'a> {
    conventions: Vec<String>,
    results: &'a [TestResult],
    errors: &'a [CellError],
}

fn render_json(outcome: &SuiteOutcome) -> String {
    let doc = JsonReport {
        conventions: conventions(outcome),
        results: &outcome.results,
        errors: &outcome.errors,
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("report serializes");
    s.push('\n');
    s
}

pub fn render_report(outcome: &SuiteOutcome, format: ReportFormat) -> String {
    match format {
        ReportFormat::Table => render_table(outcome),
        ReportFormat::Csv => render_csv(outcome),
        ReportFormat::Json => render_json(outcome),
    }
}

/// A CSV report row read back at rendered precision.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub test: String,
    pub experiment: Experiment,
    pub granularity: Granularity,
    pub statistic: f64,
    pub effect_size: EffectSize,
    pub p_value: f64,
    pub method: PMethod,
    pub n_permutations: u64,
    pub seed: Option<u64>,
    pub significant: bool,
    pub warnings: Vec<String>,
}

fn schema(field: &str, message: impl std::fmt::Display) -> Error {
    Error::SchemaError {
        path: field.to_string(),
        message: message.to_string(),
    }
}

fn number(field: &str, s: &str) -> Result<f64> {
    s.parse().map_err(|e| schema(field, e))
}

pub fn parse_csv_report(text: &str) -> Result<Vec<ReportRow>> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let headers = r.headers().map_err(|e| schema("header", e))?.clone();
    if headers.iter().ne(COLUMNS) {
        return Err(schema("header", format!("unexpected columns {headers:?}")));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| schema(&format!("row {i}"), e))?;
        let f = |c: usize| rec.get(c).unwrap_or_default();
        rows.push(ReportRow {
            test: f(0).to_string(),
            experiment: f(1).parse()?,
            granularity: f(2).parse()?,
            statistic: number("statistic", f(3))?,
            effect_size: if f(4) == ZERO_VARIANCE_LABEL {
                EffectSize::ZeroVariance
            } else {
                EffectSize::Value(number("effect_size", f(4))?)
            },
            p_value: number("p_value", f(5))?,
            method: f(6).parse()?,
            n_permutations: f(7).parse().map_err(|e| schema("n_permutations", e))?,
            seed: match f(8) {
                "" => None,
                s => Some(s.parse().map_err(|e| schema("seed", e))?),
            },
            significant: f(9) == SIGNIFICANCE_MARKER,
            warnings: match f(10) {
                "" => Vec::new(),
                s => s.split("; ").map(String::from).collect(),
            },
        });
    }
    Ok(rows)
}
