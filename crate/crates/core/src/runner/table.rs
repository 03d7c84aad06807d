use std::io::Write;
use std::path::Path;

use clap::ValueEnum;
use serde::Serialize;

use super::manifest::{write_atomic, OutputRecord};
use super::RunnerError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

/// A named table of string cells. Numbers are rendered with the shortest
/// round-trip representation so payloads are reproducible bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub kind: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

#[derive(Serialize)]
struct JsonTable<'a> {
    schema_version: u32,
    kind: &'a str,
    columns: &'a [String],
    rows: &'a [Vec<String>],
}

impl Table {
    pub fn new(name: &str, kind: &str, columns: &[&str]) -> Self {
        Table {
            name: name.into(),
            kind: kind.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn render(&self, format: OutputFormat) -> Result<Vec<u8>, RunnerError> {
        match format {
            OutputFormat::Csv => {
                let mut buf = Vec::new();
                writeln!(buf, "# schema_version={SCHEMA_VERSION}").expect("write to vec");
                let mut w = csv::Writer::from_writer(buf);
                w.write_record(&self.columns).map_err(RunnerError::runtime)?;
                for row in &self.rows {
                    w.write_record(row).map_err(RunnerError::runtime)?;
                }
                w.into_inner().map_err(RunnerError::runtime)
            }
            OutputFormat::Json => {
                let doc = JsonTable {
                    schema_version: SCHEMA_VERSION,
                    kind: &self.kind,
                    columns: &self.columns,
                    rows: &self.rows,
                };
                let mut buf = serde_json::to_vec_pretty(&doc).map_err(RunnerError::runtime)?;
                buf.push(b'\n');
                Ok(buf)
            }
        }
    }

    pub fn file_name(&self, format: OutputFormat) -> String {
        match format {
            OutputFormat::Csv => format!("{}.csv", self.name),
            OutputFormat::Json => format!("{}.json", self.name),
        }
    }

    pub fn write(&self, dir: &Path, format: OutputFormat) -> Result<OutputRecord, RunnerError> {
        let file = self.file_name(format);
        write_atomic(&dir.join(&file), &self.render(format)?)?;
        Ok(OutputRecord { path: file, kind: self.kind.clone(), row_count: self.rows.len() as u64 })
    }
}

pub(crate) fn num(x: f64) -> String {
    let a = x.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e15).contains(&a) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}
