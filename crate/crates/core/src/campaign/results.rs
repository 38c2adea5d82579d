//! The results CSV: one row per attack, fixed column order.

use std::fs::{File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::Label;
use crate::attack::{AttackDirection, AttackRecord, Outcome};
use crate::evolution::DeConfig;
use crate::imaging::PixelPerturbation;

pub const RESULT_COLUMNS: [&str; 19] = [
    "image_id",
    "label",
    "direction",
    "orig_score",
    "final_score",
    "outcome",
    "iterations",
    "evaluations",
    "x",
    "y",
    "r",
    "g",
    "b",
    "np",
    "f",
    "cr",
    "max_iter",
    "tol",
    "seed",
];

pub const TRACE_COLUMNS: [&str; 3] = ["image_id", "iteration", "best_score"];

/// Outcome cell for rows whose attack errored.
pub const ERROR_OUTCOME: &str = "error";

#[derive(Debug, Error)]
pub enum ResultsError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("column mismatch: expected [{expected}], found [{found}]")]
    Header { expected: String, found: String },
    #[error("row {row}: {message}")]
    Row { row: u64, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub image_id: String,
    pub label: Label,
    pub direction: AttackDirection,
    pub orig_score: f64,
    /// `None` when the attack errored.
    pub final_score: Option<f64>,
    /// `None` when the attack errored.
    pub outcome: Option<Outcome>,
    pub iterations: usize,
    pub evaluations: usize,
    pub perturbation: Option<PixelPerturbation>,
    pub de: DeConfig,
}

impl ResultRow {
    pub fn from_record(record: &AttackRecord, label: Label) -> Self {
        Self {
            image_id: record.image_id.clone(),
            label,
            direction: record.direction,
            orig_score: record.original_score.get(),
            final_score: Some(record.final_score.get()),
            outcome: Some(record.outcome),
            iterations: record.iterations,
            evaluations: record.evaluations,
            perturbation: Some(record.best_perturbation),
            de: record.de_params.clone(),
        }
    }

    pub fn errored(image_id: &str, label: Label, direction: AttackDirection, orig_score: f64, de: DeConfig) -> Self {
        Self {
            image_id: image_id.to_string(),
            label,
            direction,
            orig_score,
            final_score: None,
            outcome: None,
            iterations: 0,
            evaluations: 0,
            perturbation: None,
            de,
        }
    }

    fn to_fields(&self) -> Vec<String> {
        let opt = |v: Option<String>| v.unwrap_or_default();
        let p = self.perturbation;
        vec![
            self.image_id.clone(),
            self.label.as_str().to_string(),
            self.direction.as_str().to_string(),
            self.orig_score.to_string(),
            opt(self.final_score.map(|f| f.to_string())),
            self.outcome.map_or(ERROR_OUTCOME, Outcome::as_str).to_string(),
            self.iterations.to_string(),
            self.evaluations.to_string(),
            opt(p.map(|p| p.x.to_string())),
            opt(p.map(|p| p.y.to_string())),
            opt(p.map(|p| p.r.to_string())),
            opt(p.map(|p| p.g.to_string())),
            opt(p.map(|p| p.b.to_string())),
            self.de.population_size.to_string(),
            self.de.mutation_factor.to_string(),
            self.de.recombination.to_string(),
            self.de.max_iterations.to_string(),
            self.de.tolerance.to_string(),
            self.de.rng_seed.to_string(),
        ]
    }

    fn from_fields(record: &csv::StringRecord, row: u64) -> Result<Self, ResultsError> {
        let err = |message: String| ResultsError::Row { row, message };
        if record.len() != RESULT_COLUMNS.len() {
            return Err(err(format!(
                "expected {} fields, found {}",
                RESULT_COLUMNS.len(),
                record.len()
            )));
        }
        let field = |i: usize| record.get(i).unwrap_or("");
        fn parse<T: std::str::FromStr>(value: &str, column: &str, row: u64) -> Result<T, ResultsError> {
            value.parse().map_err(|_| ResultsError::Row {
                row,
                message: format!("column `{column}` has invalid value `{value}`"),
            })
        }
        let col = |i: usize| RESULT_COLUMNS[i];
        let optional = |i: usize| -> Option<&str> { Some(field(i)).filter(|s| !s.is_empty()) };

        let outcome = match field(5) {
            ERROR_OUTCOME => None,
            other => Some(other.parse::<Outcome>().map_err(err)?),
        };
        let final_score = optional(4).map(|v| parse::<f64>(v, col(4), row)).transpose()?;
        let coords: Vec<Option<&str>> = (8..13).map(optional).collect();
        let perturbation = if coords.iter().all(Option::is_none) {
            None
        } else {
            let get = |k: usize| coords[k].ok_or_else(|| err(format!("column `{}` is empty", col(8 + k))));
            Some(PixelPerturbation {
                x: parse(get(0)?, col(8), row)?,
                y: parse(get(1)?, col(9), row)?,
                r: parse(get(2)?, col(10), row)?,
                g: parse(get(3)?, col(11), row)?,
                b: parse(get(4)?, col(12), row)?,
            })
        };
        if outcome.is_some() && (final_score.is_none() || perturbation.is_none()) {
            return Err(err("completed attack is missing its final score or perturbation".into()));
        }

        Ok(Self {
            image_id: field(0).to_string(),
            label: field(1).parse().map_err(err)?,
            direction: field(2).parse().map_err(err)?,
            orig_score: parse(field(3), col(3), row)?,
            final_score,
            outcome,
            iterations: parse(field(6), col(6), row)?,
            evaluations: parse(field(7), col(7), row)?,
            perturbation,
            de: DeConfig {
                population_size: parse(field(13), col(13), row)?,
                mutation_factor: parse(field(14), col(14), row)?,
                recombination: parse(field(15), col(15), row)?,
                max_iterations: parse(field(16), col(16), row)?,
                tolerance: parse(field(17), col(17), row)?,
                rng_seed: parse(field(18), col(18), row)?,
            },
        })
    }
}

fn check_header(found: &csv::StringRecord, expected: &[&str]) -> Result<(), ResultsError> {
    if found.iter().eq(expected.iter().copied()) {
        return Ok(());
    }
    Err(ResultsError::Header {
        expected: expected.join(","),
        found: found.iter().collect::<Vec<_>>().join(","),
    })
}

fn csv_reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().flexible(true).from_reader(input)
}

/// Parses a results CSV. Row numbers in errors are 1-based data rows.
pub fn read_results<R: Read>(input: R) -> Result<Vec<ResultRow>, ResultsError> {
    let mut reader = csv_reader(input);
    check_header(reader.headers()?, &RESULT_COLUMNS)?;
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i as u64 + 1;
        let record = record.map_err(|e| ResultsError::Row {
            row,
            message: e.to_string(),
        })?;
        rows.push(ResultRow::from_fields(&record, row)?);
    }
    Ok(rows)
}

pub fn read_results_file(path: &Path) -> Result<Vec<ResultRow>, ResultsError> {
    read_results(File::open(path)?)
}

pub fn write_results<W: Write>(output: W, rows: &[ResultRow]) -> Result<(), ResultsError> {
    let mut writer = csv::Writer::from_writer(output);
    writer.write_record(RESULT_COLUMNS)?;
    for row in rows {
        writer.write_record(row.to_fields())?;
    }
    writer.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TracePoint {
    pub image_id: String,
    pub iteration: usize,
    pub best_score: f64,
}

pub fn read_traces<R: Read>(input: R) -> Result<Vec<TracePoint>, ResultsError> {
    let mut reader = csv_reader(input);
    check_header(reader.headers()?, &TRACE_COLUMNS)?;
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i as u64 + 1;
        let record = record.map_err(|e| ResultsError::Row {
            row,
            message: e.to_string(),
        })?;
        let bad = |what: &str| ResultsError::Row {
            row,
            message: format!("invalid {what}"),
        };
        if record.len() != TRACE_COLUMNS.len() {
            return Err(bad("field count"));
        }
        out.push(TracePoint {
            image_id: record[0].to_string(),
            iteration: record[1].parse().map_err(|_| bad("iteration"))?,
            best_score: record[2].parse().map_err(|_| bad("best_score"))?,
        });
    }
    Ok(out)
}

pub fn read_traces_file(path: &Path) -> Result<Vec<TracePoint>, ResultsError> {
    read_traces(File::open(path)?)
}

pub fn write_traces<W: Write>(output: W, points: &[TracePoint]) -> Result<(), ResultsError> {
    let mut writer = csv::Writer::from_writer(output);
    writer.write_record(TRACE_COLUMNS)?;
    for p in points {
        writer.write_record([p.image_id.clone(), p.iteration.to_string(), p.best_score.to_string()])?;
    }
    writer.flush()?;
    Ok(())
}

/// Append-only CSV writer that creates the header for new files and flushes
/// after every row so an interrupted campaign loses at most one line.
pub(crate) struct AppendSink {
    writer: csv::Writer<File>,
}

impl AppendSink {
    pub(crate) fn open(path: &Path, header: &[&str]) -> Result<Self, ResultsError> {
        let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        if fresh {
            writer.write_record(header)?;
            writer.flush()?;
        }
        Ok(Self { writer })
    }

    pub(crate) fn write_row(&mut self, row: &ResultRow) -> Result<(), ResultsError> {
        self.writer.write_record(row.to_fields())?;
        self.writer.flush()?;
        Ok(())
    }

    pub(crate) fn write_trace(&mut self, image_id: &str, trace: &[f64]) -> Result<(), ResultsError> {
        for (i, s) in trace.iter().enumerate() {
            self.writer.write_record([image_id, &i.to_string(), &s.to_string()])?;
        }
        self.writer.flush()?;
        Ok(())
    }
}
