use std::fs::File;
use std::io::{self, Write};
use std::path::Path;
use std::process::ExitCode;

use clap::ValueEnum;
use serde_json::Value;
use streambound::Error;

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_VIOLATION: u8 = 3;
pub const EXIT_INFEASIBLE: u8 = 4;
pub const EXIT_OVERFLOW: u8 = 5;
pub const EXIT_ABORTED: u8 = 6;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Overflow { .. } => EXIT_OVERFLOW,
        Error::Infeasible(_) => EXIT_INFEASIBLE,
        Error::SearchAborted(_) => EXIT_ABORTED,
        Error::Inadmissible { .. } => EXIT_VIOLATION,
        Error::InvalidOrder(_) | Error::InvalidScenario(_) | Error::InvalidTime(_) | Error::EmptyNetwork => {
            EXIT_USAGE
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self {
            code: exit_code(&e),
            message: e.to_string(),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Self {
            code: 1,
            message: e.to_string(),
        }
    }
}

/// A command's result: one table for CSV, one document for JSON, notes for
/// standard error and the exit status to finish with.
pub struct Report {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub json: Value,
    pub notices: Vec<String>,
    pub code: u8,
}

impl Report {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
            json: Value::Null,
            notices: Vec::new(),
            code: 0,
        }
    }

    pub fn row(&mut self, cells: Vec<String>) {
        self.rows.push(cells);
    }

    pub fn emit(self, format: Format, out: Option<&Path>) -> Result<ExitCode, Failure> {
        let sink: Box<dyn Write> = match out {
            Some(path) => Box::new(File::create(path).map_err(|e| Failure {
                code: 1,
                message: format!("{}: {e}", path.display()),
            })?),
            None => Box::new(io::stdout().lock()),
        };
        match format {
            Format::Csv => {
                let mut w = csv::Writer::from_writer(sink);
                w.write_record(&self.header).map_err(csv_error)?;
                for r in &self.rows {
                    w.write_record(r).map_err(csv_error)?;
                }
                w.flush()?;
            }
            Format::Json => {
                let mut sink = sink;
                serde_json::to_writer(&mut sink, &self.json).map_err(io::Error::from)?;
                sink.write_all(b"\n")?;
                sink.flush()?;
            }
        }
        for n in &self.notices {
            eprintln!("{n}");
        }
        Ok(ExitCode::from(self.code))
    }
}

fn csv_error(e: csv::Error) -> Failure {
    Failure {
        code: 1,
        message: e.to_string(),
    }
}

/// Fixed decimals, trailing zeros kept so columns line up across runs.
pub fn fixed(x: f64, decimals: usize) -> String {
    format!("{x:.decimals$}")
}

/// Same rounding as [`fixed`] for JSON numbers.
pub fn rounded(x: f64, decimals: i32) -> Value {
    let scale = 10f64.powi(decimals);
    serde_json::Number::from_f64((x * scale).round() / scale)
        .map(Value::Number)
        .unwrap_or(Value::Null)
}
