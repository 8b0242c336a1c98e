use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use nalgebra::{Dim, Matrix, RawStorage};
use serde::Serialize;
use serde_json::{json, Map, Value};

/// One pass/fail criterion embedded in a report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    /// `"<="`, `"<"` or `">="`.
    pub relation: &'static str,
    pub threshold: f64,
    pub pass: bool,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Check { name: name.into(), value, relation: "<=", threshold, pass: value <= threshold }
    }

    pub fn below(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Check { name: name.into(), value, relation: "<", threshold, pass: value < threshold }
    }

    pub fn at_least(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Check { name: name.into(), value, relation: ">=", threshold, pass: value >= threshold }
    }

    pub fn summary_line(&self) -> String {
        let tag = if self.pass { "PASS" } else { "FAIL" };
        format!("{tag}  {}: {:.6e} {} {:.1e}", self.name, self.value, self.relation, self.threshold)
    }
}

/// Result of one command: checks, a JSON body and the files written.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub command: &'static str,
    pub checks: Vec<Check>,
    pub details: Value,
    pub artifacts: Vec<PathBuf>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn report(&self, config: &Value) -> Value {
        let mut body = Map::new();
        body.insert("command".into(), json!(self.command));
        body.insert("config".into(), config.clone());
        body.insert("checks".into(), serde_json::to_value(&self.checks).expect("checks serialize"));
        body.insert("pass".into(), json!(self.passed()));
        body.insert("results".into(), self.details.clone());
        Value::Object(body)
    }
}

pub fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Writes CSV rows with every float in 17 significant digits.
pub struct CsvWriter {
    buf: String,
    columns: usize,
}

impl CsvWriter {
    pub fn new(header: &[&str]) -> Self {
        let mut buf = header.join(",");
        buf.push('\n');
        CsvWriter { buf, columns: header.len() }
    }

    /// Append a row of a leading integer label followed by floats.
    pub fn row(&mut self, label: Option<usize>, values: &[f64]) {
        debug_assert_eq!(label.is_some() as usize + values.len(), self.columns);
        let mut first = true;
        if let Some(l) = label {
            write!(self.buf, "{l}").unwrap();
            first = false;
        }
        for v in values {
            if !first {
                self.buf.push(',');
            }
            first = false;
            write!(self.buf, "{}", fmt_float(*v)).unwrap();
        }
        self.buf.push('\n');
    }

    pub fn write(self, path: &Path) -> Result<()> {
        std::fs::write(path, self.buf).with_context(|| format!("writing {}", path.display()))
    }
}

pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Row-major nested array of a matrix.
pub fn matrix_json<R: Dim, C: Dim, S: RawStorage<f64, R, C>>(m: &Matrix<f64, R, C, S>) -> Value {
    json!((0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect::<Vec<_>>()).collect::<Vec<_>>())
}

pub fn vector_json<R: Dim, C: Dim, S: RawStorage<f64, R, C>>(v: &Matrix<f64, R, C, S>) -> Value {
    json!(v.iter().copied().collect::<Vec<_>>())
}
