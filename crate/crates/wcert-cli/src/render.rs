//! Output rendering. Every format writes LF line endings only, and every
//! dataset is assembled in a fixed order, so a fixed configuration and
//! seed always produce identical bytes.

use std::io::Write;
use std::path::Path;

use clap::ValueEnum;
use serde::Serialize;

use crate::Failure;

/// Output format of the tabular subcommands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    /// Comma-separated values with a rounded display column and a raw
    /// column at six decimals.
    Csv,
    /// Markdown table with columns padded to a common width.
    Md,
    /// JSON document carrying the raw values.
    Json,
}

impl Format {
    /// Flag spelling of the format.
    pub fn name(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Md => "md",
            Format::Json => "json",
        }
    }
}

/// Column alignment inside rendered markdown.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Align {
    Left,
    Right,
}

/// A dataset ready for rendering. Rows hold display strings and every row
/// has exactly `headers.len()` cells; the JSON value carries the same data
/// with raw numbers.
pub struct Dataset {
    pub headers: Vec<&'static str>,
    pub aligns: Vec<Align>,
    pub rows: Vec<Vec<String>>,
    pub json: serde_json::Value,
}

impl Dataset {
    /// Render in the requested format; tabular commands default to CSV.
    pub fn render(&self, format: Option<Format>) -> Result<String, Failure> {
        match format.unwrap_or(Format::Csv) {
            Format::Csv => self.to_csv(),
            Format::Md => Ok(self.to_markdown()),
            Format::Json => json_text(&self.json),
        }
    }

    fn to_csv(&self) -> Result<String, Failure> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.headers)
            .and_then(|()| self.rows.iter().try_for_each(|row| w.write_record(row)))
            .map_err(|e| Failure::Io(format!("csv rendering: {e}")))?;
        let bytes = w
            .into_inner()
            .map_err(|e| Failure::Io(format!("csv rendering: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Failure::Io(format!("csv rendering: {e}")))
    }

    fn to_markdown(&self) -> String {
        let mut widths: Vec<usize> = self.headers.iter().map(|h| h.chars().count()).collect();
        for row in &self.rows {
            for (c, cell) in row.iter().enumerate() {
                widths[c] = widths[c].max(cell.chars().count());
            }
        }
        let mut out = String::new();
        push_md_row(&mut out, &self.headers, &widths, &self.aligns);
        out.push('|');
        for (&w, align) in widths.iter().zip(&self.aligns) {
            match align {
                Align::Left => {
                    out.push(':');
                    out.push_str(&"-".repeat(w + 1));
                }
                Align::Right => {
                    out.push_str(&"-".repeat(w + 1));
                    out.push(':');
                }
            }
            out.push('|');
        }
        out.push('\n');
        for row in &self.rows {
            push_md_row(&mut out, row, &widths, &self.aligns);
        }
        out
    }
}

fn push_md_row<S: AsRef<str>>(out: &mut String, cells: &[S], widths: &[usize], aligns: &[Align]) {
    out.push('|');
    for ((cell, &w), align) in cells.iter().zip(widths).zip(aligns) {
        let cell = cell.as_ref();
        let pad = w - cell.chars().count();
        out.push(' ');
        match align {
            Align::Left => {
                out.push_str(cell);
                out.push_str(&" ".repeat(pad));
            }
            Align::Right => {
                out.push_str(&" ".repeat(pad));
                out.push_str(cell);
            }
        }
        out.push(' ');
        out.push('|');
    }
    out.push('\n');
}

/// Pretty JSON with a trailing newline.
pub fn json_text<T: Serialize>(value: &T) -> Result<String, Failure> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| Failure::Io(format!("json rendering: {e}")))
}

/// Display rounding at the printed precision of three decimals.
pub fn fmt3(v: f64) -> String {
    format!("{v:.3}")
}

/// Raw column value at six decimals.
pub fn fmt6(v: f64) -> String {
    format!("{v:.6}")
}

/// Raw value rounded to six decimals for JSON embedding.
pub fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

/// Write rendered text to the output file or stdout, guaranteeing a
/// trailing newline.
pub fn emit(text: &str, out: Option<&Path>) -> Result<(), Failure> {
    let mut owned = String::with_capacity(text.len() + 1);
    owned.push_str(text);
    if !owned.ends_with('\n') {
        owned.push('\n');
    }
    match out {
        Some(path) => std::fs::write(path, owned.as_bytes())
            .map_err(|e| Failure::Io(format!("cannot write {}: {e}", path.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(owned.as_bytes())
                .and_then(|()| stdout.flush())
                .map_err(|e| Failure::Io(format!("cannot write to stdout: {e}")))
        }
    }
}
