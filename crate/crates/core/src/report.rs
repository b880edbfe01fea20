//! CSV, JSON and markdown renderings of score rows and test tables.
//!
//! Statistics tables print floats with 4 decimals in CSV and markdown. Row
//! tables and all JSON keep full precision (shortest round-trip form).

use std::fmt::Write as _;

use serde::Serialize;

use crate::stats::{StatTestResult, TestKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
    Md,
}

impl OutputFormat {
    pub fn extension(self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
            OutputFormat::Md => "md",
        }
    }
}

impl std::str::FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            "md" | "markdown" => Ok(OutputFormat::Md),
            other => Err(format!("unknown output format '{other}'")),
        }
    }
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> String {
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
}

/// Serializes rows as CSV with a header line.
pub fn rows_to_csv<R: Serialize>(rows: &[R]) -> Result<String, csv::Error> {
    let mut w = csv_writer();
    for r in rows {
        w.serialize(r)?;
    }
    Ok(finish(w))
}

#[derive(Serialize)]
struct RowsDoc<'a, R> {
    rows: &'a [R],
}

#[derive(Serialize)]
struct StatsDoc<'a> {
    stats: &'a [StatTestResult],
}

pub fn rows_to_json<R: Serialize>(rows: &[R]) -> String {
    let mut s = serde_json::to_string_pretty(&RowsDoc { rows }).expect("rows serialize");
    s.push('\n');
    s
}

pub fn stats_to_json(results: &[StatTestResult]) -> String {
    let mut s =
        serde_json::to_string_pretty(&StatsDoc { stats: results }).expect("stats serialize");
    s.push('\n');
    s
}

fn mean_headers(kind: Option<TestKind>) -> [&'static str; 2] {
    match kind {
        Some(TestKind::Paired) => ["mean_female", "mean_male"],
        Some(TestKind::Independent) => ["mean_MH", "mean_non_MH"],
        None => ["mean_1", "mean_2"],
    }
}

fn kind_name(kind: TestKind) -> &'static str {
    match kind {
        TestKind::Paired => "paired",
        TestKind::Independent => "independent",
    }
}

/// The kind shared by every result, or `None` for a mixed table.
fn uniform_kind(results: &[StatTestResult]) -> Option<TestKind> {
    let first = results.first()?.test.kind;
    results
        .iter()
        .all(|r| r.test.kind == first)
        .then_some(first)
}

fn header(kind: Option<TestKind>) -> Vec<&'static str> {
    let [m1, m2] = mean_headers(kind);
    let mut h = vec!["model", "subset"];
    if kind.is_none() {
        h.push("test");
    }
    h.extend([m1, m2, "p_value", "cohens_d", "p_adjusted", "stars", "max"]);
    h
}

fn cells(r: &StatTestResult, with_kind: bool) -> Vec<String> {
    let mut c = vec![r.model.clone(), r.subset.clone()];
    if with_kind {
        c.push(kind_name(r.test.kind).to_string());
    }
    c.extend([
        format!("{:.4}", r.test.mean1),
        format!("{:.4}", r.test.mean2),
        format!("{:.4}", r.test.p_two_sided),
        format!("{:.4}", r.test.cohens_d),
        format!("{:.4}", r.p_adjusted),
        r.stars.clone(),
        r.max.clone(),
    ]);
    c
}

/// Statistics table as CSV. A table mixing paired and independent tests
/// gets a `test` column and neutral `mean_1`/`mean_2` headers.
pub fn stats_to_csv(results: &[StatTestResult]) -> Result<String, csv::Error> {
    let kind = uniform_kind(results);
    let mut w = csv_writer();
    w.write_record(header(kind))?;
    for r in results {
        w.write_record(cells(r, kind.is_none()))?;
    }
    Ok(finish(w))
}

fn markdown_table(out: &mut String, results: &[StatTestResult]) {
    let head = header(uniform_kind(results));
    let body: Vec<Vec<String>> = results.iter().map(|r| cells(r, false)).collect();
    let mut widths: Vec<usize> = head.iter().map(|h| h.chars().count()).collect();
    for row in &body {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |out: &mut String, cols: Vec<String>| {
        out.push('|');
        for (c, w) in cols.iter().zip(&widths) {
            let _ = write!(out, " {c:<w$} |");
        }
        out.push('\n');
    };
    line(out, head.iter().map(|s| s.to_string()).collect());
    line(out, widths.iter().map(|w| "-".repeat(*w)).collect());
    for row in body {
        line(out, row);
    }
}

/// Aligned markdown; paired and independent tests go in separate tables.
pub fn stats_to_markdown(results: &[StatTestResult]) -> String {
    let mut out = String::new();
    for (kind, title) in [
        (
            TestKind::Paired,
            "Paired t-test, female vs male probability",
        ),
        (
            TestKind::Independent,
            "Independent t-test of gender disparity (female - male)",
        ),
    ] {
        let part: Vec<StatTestResult> = results
            .iter()
            .filter(|r| r.test.kind == kind)
            .cloned()
            .collect();
        if part.is_empty() {
            continue;
        }
        if !out.is_empty() {
            out.push('\n');
        }
        let _ = writeln!(out, "### {title}\n");
        markdown_table(&mut out, &part);
    }
    out
}

pub fn render_stats_table(
    results: &[StatTestResult],
    format: OutputFormat,
) -> Result<String, csv::Error> {
    Ok(match format {
        OutputFormat::Csv => stats_to_csv(results)?,
        OutputFormat::Json => stats_to_json(results),
        OutputFormat::Md => stats_to_markdown(results),
    })
}
