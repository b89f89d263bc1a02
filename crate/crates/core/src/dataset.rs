//! JSON-lines dataset records and schema validation.
//!
//! One object per line: `{"text": ..}` for single sentences or
//! `{"text1": .., "text2": ..}` for pairs, with an optional integer `label`
//! and optional teacher distribution `probs`. Blank lines are skipped but
//! still counted for line numbers.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::featurize::{Example, Featurizer, PairExample};

/// Allowed deviation of a probability vector's sum from 1.
pub const PROB_SUM_TOLERANCE: f64 = 1e-6;

/// Violations listed in a validation report; the total is always counted.
pub const MAX_REPORTED_VIOLATIONS: usize = 10;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Record {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text1: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text2: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probs: Option<Vec<f64>>,
}

impl Record {
    pub fn single(text: impl Into<String>) -> Self {
        Record {
            text: Some(text.into()),
            ..Default::default()
        }
    }

    pub fn pair(left: impl Into<String>, right: impl Into<String>) -> Self {
        Record {
            text1: Some(left.into()),
            text2: Some(right.into()),
            ..Default::default()
        }
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = Some(label);
        self
    }

    pub fn with_probs(mut self, probs: Vec<f64>) -> Self {
        self.probs = Some(probs);
        self
    }

    pub fn is_pair(&self) -> bool {
        self.text.is_none() && self.text1.is_some()
    }

    /// Every text field, for vocabulary counting.
    pub fn texts(&self) -> impl Iterator<Item = &str> {
        [&self.text, &self.text1, &self.text2]
            .into_iter()
            .filter_map(|t| t.as_deref())
    }
}

/// A parsed record with its 1-based source line.
#[derive(Debug, Clone, PartialEq)]
pub struct Numbered {
    pub line: usize,
    pub record: Record,
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<Numbered>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line).map_err(|e| Error::DataValidation {
            line: i + 1,
            message: e.to_string(),
        })?;
        if record.text.is_none() && (record.text1.is_none() || record.text2.is_none()) {
            return Err(Error::DataValidation {
                line: i + 1,
                message: "record needs \"text\" or both \"text1\" and \"text2\"".into(),
            });
        }
        out.push(Numbered { line: i + 1, record });
    }
    Ok(out)
}

pub fn write_records<'a>(
    path: impl AsRef<Path>,
    records: impl IntoIterator<Item = &'a Record>,
) -> Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Documents from a file: JSONL records contribute their text fields, any
/// other file is one document per non-empty line.
pub fn read_documents(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e == "jsonl") {
        return Ok(read_records(path)?
            .into_iter()
            .flat_map(|n| {
                let r = n.record;
                [r.text, r.text1, r.text2].into_iter().flatten()
            })
            .collect());
    }
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(line);
        }
    }
    Ok(out)
}

/// What a dataset must carry for its intended use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    /// Every record has a `label`.
    Labeled,
    /// Every record has `probs`.
    SoftLabels,
    /// Only schema checks.
    Any,
}

/// Featurizes records, checking the supervision required by `kind`.
pub fn to_examples(
    records: &[Numbered],
    featurizer: &Featurizer<'_>,
    pair_mode: bool,
    kind: DataKind,
    n_classes: usize,
) -> Result<Vec<Example>> {
    let mut scratch = String::new();
    records
        .iter()
        .map(|Numbered { line, record }| {
            let fail = |message: String| Error::DataValidation { line: *line, message };
            match kind {
                DataKind::Labeled if record.label.is_none() => {
                    return Err(fail("missing \"label\"".into()))
                }
                DataKind::SoftLabels if record.probs.is_none() => {
                    return Err(fail("missing \"probs\"".into()))
                }
                _ => {}
            }
            if let Some(l) = record.label {
                if l >= n_classes {
                    return Err(fail(format!("label {l} out of range for {n_classes} classes")));
                }
            }
            if let Some(p) = &record.probs {
                check_probs(p, Some(n_classes)).map_err(fail)?;
            }
            if record.is_pair() != pair_mode {
                return Err(fail(if pair_mode {
                    "pair model needs \"text1\"/\"text2\"".into()
                } else {
                    "single-sentence model needs \"text\"".into()
                }));
            }
            Ok(if pair_mode {
                let left = featurizer.featurize_with(record.text1.as_deref().unwrap_or(""), &mut scratch);
                let right = featurizer.featurize_with(record.text2.as_deref().unwrap_or(""), &mut scratch);
                Example::Pair(PairExample {
                    left,
                    right,
                    label: record.label,
                    teacher_probs: record.probs.clone(),
                })
            } else {
                let mut ex = featurizer.featurize_with(record.text.as_deref().unwrap_or(""), &mut scratch);
                ex.label = record.label;
                ex.teacher_probs = record.probs.clone();
                Example::Single(ex)
            })
        })
        .collect()
}

fn check_probs(p: &[f64], n_classes: Option<usize>) -> std::result::Result<(), String> {
    if p.len() < 2 {
        return Err(format!("\"probs\" needs at least 2 entries, got {}", p.len()));
    }
    if let Some(n) = n_classes {
        if p.len() != n {
            return Err(format!("\"probs\" has {} entries, expected {n}", p.len()));
        }
    }
    if let Some(bad) = p.iter().find(|x| !x.is_finite() || **x < 0.0) {
        return Err(format!("\"probs\" entry {bad} is not a non-negative finite number"));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
        return Err(format!("\"probs\" sums to {sum}, not 1"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub lines_checked: usize,
    pub total_violations: usize,
    /// The first [`MAX_REPORTED_VIOLATIONS`] violations in line order.
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.total_violations == 0
    }
}

/// Schema-checks a JSONL file. Only an unreadable file is an error; every
/// content problem becomes a violation. At most one violation is recorded
/// per line.
pub fn validate_data(
    path: impl AsRef<Path>,
    kind: DataKind,
    n_classes: Option<usize>,
) -> Result<ValidationReport> {
    let reader = BufReader::new(File::open(path)?);
    let mut report = ValidationReport::default();
    let mut shape = FileShape {
        n_classes,
        pair: None,
    };
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        report.lines_checked += 1;
        if let Err(message) = check_line(&line, kind, &mut shape) {
            report.total_violations += 1;
            if report.violations.len() < MAX_REPORTED_VIOLATIONS {
                report.violations.push(Violation { line: i + 1, message });
            }
        }
    }
    Ok(report)
}

/// File-wide properties fixed by the first valid line that exhibits them.
struct FileShape {
    n_classes: Option<usize>,
    pair: Option<bool>,
}

fn check_line(line: &str, kind: DataKind, shape: &mut FileShape) -> std::result::Result<(), String> {
    let value: Value = serde_json::from_str(line).map_err(|e| format!("invalid JSON: {e}"))?;
    let obj = value.as_object().ok_or("line is not a JSON object")?;

    let is_str = |k: &str| obj.get(k).map(Value::is_string);
    let pair = match (is_str("text"), is_str("text1"), is_str("text2")) {
        (Some(true), None, None) => false,
        (None, Some(true), Some(true)) => true,
        (Some(false), ..) | (_, Some(false), _) | (_, _, Some(false)) => {
            return Err("text fields must be strings".into())
        }
        _ => return Err("record needs exactly \"text\" or both \"text1\" and \"text2\"".into()),
    };
    if let Some(expected) = shape.pair {
        if expected != pair {
            return Err("file mixes single-sentence and pair records".into());
        }
    }

    let label = match obj.get("label") {
        None | Some(Value::Null) => None,
        Some(v) => Some(v.as_u64().ok_or("\"label\" must be a non-negative integer")? as usize),
    };
    let probs = match obj.get("probs") {
        None | Some(Value::Null) => None,
        Some(Value::Array(items)) => Some(
            items
                .iter()
                .map(|x| x.as_f64().ok_or("\"probs\" entries must be numbers"))
                .collect::<std::result::Result<Vec<_>, _>>()?,
        ),
        Some(_) => return Err("\"probs\" must be an array".into()),
    };
    match kind {
        DataKind::Labeled if label.is_none() => return Err("missing \"label\"".into()),
        DataKind::SoftLabels if probs.is_none() => return Err("missing \"probs\"".into()),
        _ => {}
    }
    if let Some(p) = &probs {
        check_probs(p, shape.n_classes)?;
    }
    let classes = shape.n_classes.or(probs.as_ref().map(Vec::len));
    if let (Some(l), Some(n)) = (label, classes) {
        if l >= n {
            return Err(format!("label {l} out of range for {n} classes"));
        }
    }

    shape.pair = Some(pair);
    if shape.n_classes.is_none() {
        shape.n_classes = probs.map(|p| p.len());
    }
    Ok(())
}
