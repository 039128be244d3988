//! Reading result CSVs back and rendering them as Markdown or as one
//! long-format CSV (`table,series,x,task,f1`) that plots directly.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use tonequant_core::experiment::{COMPARISON_HEADER, RESIDUAL_HEADER, SWEEP_HEADER};

use crate::{CliError, CliResult};

pub const LONG_HEADER: [&str; 5] = ["table", "series", "x", "task", "f1"];
const TIMING_HEADER: [&str; 2] = ["representation", "train_time_s"];

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub representation: String,
    pub levels: usize,
    pub phone_f1: Option<f64>,
    pub tone_f1: Option<f64>,
    pub eval_segments: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub k: usize,
    pub variant: String,
    pub phone_f1: Option<f64>,
    pub tone_f1: Option<f64>,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualRow {
    pub k_phone: usize,
    pub level: String,
    pub task: String,
    pub f1: Option<f64>,
    pub latent_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Table {
    Comparison(Vec<ComparisonRow>),
    Timing(Vec<(String, f64)>),
    Sweep(Vec<SweepRow>),
    Residual(Vec<ResidualRow>),
}

impl Table {
    pub fn name(&self) -> &'static str {
        match self {
            Table::Comparison(_) => "comparison",
            Table::Timing(_) => "timing",
            Table::Sweep(_) => "sweep",
            Table::Residual(_) => "residual",
        }
    }
}

/// A parsed input: its `#` provenance lines and its rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Input {
    pub path: PathBuf,
    pub comments: Vec<String>,
    pub table: Table,
}

fn malformed(path: &Path, reason: impl std::fmt::Display) -> CliError {
    CliError::Usage(format!("{}: malformed result CSV: {reason}", path.display()))
}

fn parse_f1(path: &Path, s: &str) -> CliResult<Option<f64>> {
    if s.is_empty() {
        return Ok(None);
    }
    let v: f64 = s.parse().map_err(|_| malformed(path, format!("bad score {s:?}")))?;
    if !(0.0..=1.0).contains(&v) {
        return Err(malformed(path, format!("score {v} outside [0, 1]")));
    }
    Ok(Some(v))
}

fn parse_num<T: std::str::FromStr>(path: &Path, s: &str) -> CliResult<T> {
    s.parse().map_err(|_| malformed(path, format!("bad number {s:?}")))
}

pub fn parse_input(path: &Path) -> CliResult<Input> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_text(path, &text)
}

pub fn parse_text(path: &Path, text: &str) -> CliResult<Input> {
    let comments = text
        .lines()
        .filter(|l| l.starts_with('#'))
        .map(|l| l.trim_start_matches('#').trim().to_string())
        .collect();
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| malformed(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut records = Vec::new();
    for r in reader.records() {
        records.push(r.map_err(|e| malformed(path, e))?);
    }
    let is = |h: &[&str]| header.iter().map(String::as_str).eq(h.iter().copied());
    let table = if is(&COMPARISON_HEADER) {
        let mut rows = Vec::new();
        for r in &records {
            rows.push(ComparisonRow {
                representation: r[0].to_string(),
                levels: parse_num(path, &r[1])?,
                phone_f1: parse_f1(path, &r[2])?,
                tone_f1: parse_f1(path, &r[3])?,
                eval_segments: parse_num(path, &r[4])?,
            });
        }
        Table::Comparison(rows)
    } else if is(&TIMING_HEADER) {
        let mut rows = Vec::new();
        for r in &records {
            rows.push((r[0].to_string(), parse_num(path, &r[1])?));
        }
        Table::Timing(rows)
    } else if is(&SWEEP_HEADER) {
        let mut rows = Vec::new();
        for r in &records {
            rows.push(SweepRow {
                k: parse_num(path, &r[0])?,
                variant: r[1].to_string(),
                phone_f1: parse_f1(path, &r[2])?,
                tone_f1: parse_f1(path, &r[3])?,
                status: r[4].to_string(),
            });
        }
        Table::Sweep(rows)
    } else if is(&RESIDUAL_HEADER) {
        let mut rows = Vec::new();
        for r in &records {
            rows.push(ResidualRow {
                k_phone: parse_num(path, &r[0])?,
                level: r[1].to_string(),
                task: r[2].to_string(),
                f1: parse_f1(path, &r[3])?,
                latent_f1: parse_f1(path, &r[4])?,
            });
        }
        Table::Residual(rows)
    } else {
        return Err(malformed(path, format!("unrecognised header {header:?}")));
    };
    Ok(Input {
        path: path.to_path_buf(),
        comments,
        table,
    })
}

/// Rows to bold: those whose score is at least the second-highest score
/// (so ties at the boundary are all bolded). Missing scores are never bold.
pub fn top_two(scores: &[Option<f64>]) -> Vec<bool> {
    let mut sorted: Vec<f64> = scores.iter().flatten().copied().collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let Some(&cutoff) = sorted.get(1).or(sorted.first()) else {
        return vec![false; scores.len()];
    };
    scores.iter().map(|s| s.is_some_and(|v| v >= cutoff)).collect()
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{v:.4}"))
}

fn render_comparison(out: &mut String, rows: &[ComparisonRow]) {
    let bold = top_two(&rows.iter().map(|r| r.tone_f1).collect::<Vec<_>>());
    out.push_str("| Representation | Levels | Phone F1 | Tone F1 | Eval segments |\n");
    out.push_str("|---|---:|---:|---:|---:|\n");
    for (r, b) in rows.iter().zip(bold) {
        let tone = if b {
            format!("**{}**", cell(r.tone_f1))
        } else {
            cell(r.tone_f1)
        };
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} |",
            r.representation,
            r.levels,
            cell(r.phone_f1),
            tone,
            r.eval_segments
        );
    }
    out.push_str("\nBold tone scores are the top two.\n");
}

fn render_sweep(out: &mut String, rows: &[SweepRow]) {
    out.push_str("| K | Variant | Phone F1 | Tone F1 | Status |\n|---:|---|---:|---:|---|\n");
    for r in rows {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} |",
            r.k,
            r.variant,
            cell(r.phone_f1),
            cell(r.tone_f1),
            r.status
        );
    }
}

fn render_residual(out: &mut String, rows: &[ResidualRow]) {
    out.push_str("| K phone | Level | Task | F1 | Latent F1 |\n|---:|---|---|---:|---:|\n");
    for r in rows {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} |",
            r.k_phone,
            r.level,
            r.task,
            cell(r.f1),
            cell(r.latent_f1)
        );
    }
}

fn render_timing(out: &mut String, rows: &[(String, f64)]) {
    out.push_str("| Representation | Train time (s) |\n|---|---:|\n");
    for (name, t) in rows {
        let _ = writeln!(out, "| {name} | {t:.1} |");
    }
}

pub fn render_markdown(inputs: &[Input]) -> String {
    let mut out = String::from("# tonequant report\n");
    let provenance: BTreeSet<&String> = inputs.iter().flat_map(|i| &i.comments).collect();
    if !provenance.is_empty() {
        out.push_str("\n## Provenance\n\n");
        for line in provenance {
            let _ = writeln!(out, "- `{line}`");
        }
    }
    for input in inputs {
        let title = match &input.table {
            Table::Comparison(_) => "Quantiser comparison",
            Table::Timing(_) => "Training time",
            Table::Sweep(_) => "Codebook size sweep",
            Table::Residual(_) => "Residual levels",
        };
        let _ = write!(out, "\n## {title}\n\n");
        match &input.table {
            Table::Comparison(rows) => render_comparison(&mut out, rows),
            Table::Timing(rows) => render_timing(&mut out, rows),
            Table::Sweep(rows) => render_sweep(&mut out, rows),
            Table::Residual(rows) => render_residual(&mut out, rows),
        }
    }
    out
}

/// Long-format rows for one input; timing tables contribute none.
pub fn long_rows(input: &Input) -> Vec<[String; 5]> {
    let table = input.table.name().to_string();
    let mut rows = Vec::new();
    let mut push = |series: &str, x: String, task: &str, v: Option<f64>| {
        if let Some(v) = v {
            rows.push([table.clone(), series.to_string(), x, task.to_string(), format!("{v:.6}")]);
        }
    };
    match &input.table {
        Table::Comparison(rs) => {
            for r in rs {
                push(&r.representation, String::new(), "phone", r.phone_f1);
                push(&r.representation, String::new(), "tone", r.tone_f1);
            }
        }
        Table::Timing(_) => {}
        Table::Sweep(rs) => {
            for r in rs {
                push(&r.variant, r.k.to_string(), "phone", r.phone_f1);
                push(&r.variant, r.k.to_string(), "tone", r.tone_f1);
            }
        }
        Table::Residual(rs) => {
            for r in rs {
                push(&r.level, r.k_phone.to_string(), &r.task, r.f1);
            }
            for r in rs.iter().filter(|r| r.level == "L1") {
                push("latent", r.k_phone.to_string(), &r.task, r.latent_f1);
            }
        }
    }
    rows
}

pub fn render_long_csv(inputs: &[Input]) -> String {
    let mut comments: Vec<&String> = Vec::new();
    for c in inputs.iter().flat_map(|i| &i.comments) {
        if !comments.contains(&c) {
            comments.push(c);
        }
    }
    let mut out: String = comments.iter().map(|c| format!("# {c}\n")).collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(LONG_HEADER).expect("in-memory write");
    for input in inputs {
        for row in long_rows(input) {
            w.write_record(&row).expect("in-memory write");
        }
    }
    out.push_str(&String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8"));
    out
}
