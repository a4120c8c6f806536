//! CSV for tables, canonical JSON for charts.
//!
//! A table CSV starts with `#schema=<SchemaKind>` and, when the table has
//! provenance, `#provenance=<json>`, followed by the header row and data.
//! Text, timestamp and waveform cells are quoted, numbers are bare, and null
//! cells are empty. Waveforms are space-separated decimals with `E` for a
//! missing sample.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use csv::{QuoteStyle, Terminator, WriterBuilder};
use thiserror::Error;

use super::chart::ChartSpec;
use crate::flatten::{Cell, Column, ColumnType, FlatTable, SchemaKind, TableError};
use crate::time::{format_date, format_timestamp, parse_date, parse_timestamp};

const SCHEMA_PREFIX: &str = "#schema=";
const PROVENANCE_PREFIX: &str = "#provenance=";
const MISSING_SAMPLE: &str = "E";

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}, column {column}: {message}")]
    Cell {
        line: u64,
        column: String,
        message: String,
    },
    #[error("bad header: {0}")]
    Header(String),
    #[error(transparent)]
    Table(#[from] TableError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ExportError + '_ {
    move |source| ExportError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn encode(cell: &Cell) -> String {
    match cell {
        Cell::Null => String::new(),
        Cell::Text(s) => s.clone(),
        Cell::Decimal(v) => v.to_string(),
        Cell::Integer(v) => v.to_string(),
        Cell::Timestamp(t) => format_timestamp(t),
        Cell::Date(d) => format_date(d),
        Cell::Waveform(samples) => samples
            .iter()
            .map(|s| s.map_or_else(|| MISSING_SAMPLE.to_string(), |v| v.to_string()))
            .collect::<Vec<_>>()
            .join(" "),
    }
}

/// Serializes a table to CSV bytes.
pub fn table_to_csv(table: &FlatTable) -> Result<Vec<u8>, ExportError> {
    let mut out = Vec::new();
    writeln!(out, "{SCHEMA_PREFIX}{}", table.schema()).expect("vec write");
    if !table.provenance().is_empty() {
        let json = serde_json::to_string(table.provenance()).expect("string map serializes");
        writeln!(out, "{PROVENANCE_PREFIX}{json}").expect("vec write");
    }
    let mut header = WriterBuilder::new()
        .terminator(Terminator::Any(b'\n'))
        .from_writer(&mut out);
    header.write_record(table.column_names())?;
    header.flush().map_err(csv::Error::from)?;
    drop(header);

    let mut body = WriterBuilder::new()
        .terminator(Terminator::Any(b'\n'))
        .quote_style(QuoteStyle::NonNumeric)
        .from_writer(&mut out);
    for row in table.rows() {
        body.write_record(row.iter().map(encode))?;
    }
    body.flush().map_err(csv::Error::from)?;
    drop(body);
    Ok(out)
}

/// Writes a table as CSV to `writer`, returning the byte count.
pub fn export_csv(table: &FlatTable, mut writer: impl Write) -> Result<usize, ExportError> {
    let bytes = table_to_csv(table)?;
    writer.write_all(&bytes).map_err(|source| ExportError::Io {
        path: "<writer>".into(),
        source,
    })?;
    Ok(bytes.len())
}

pub fn export_csv_file(table: &FlatTable, path: impl AsRef<Path>) -> Result<usize, ExportError> {
    let path = path.as_ref();
    let bytes = table_to_csv(table)?;
    fs::write(path, &bytes).map_err(io_err(path))?;
    Ok(bytes.len())
}

fn decode(text: &str, ty: ColumnType) -> Result<Cell, String> {
    if ty == ColumnType::String {
        return Ok(Cell::Text(text.to_string()));
    }
    if text.is_empty() {
        return Ok(Cell::Null);
    }
    let bad = |what: &str| format!("{text:?} is not a valid {what}");
    match ty {
        ColumnType::String => unreachable!(),
        ColumnType::Decimal => text
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(Cell::Decimal)
            .ok_or_else(|| bad("decimal")),
        ColumnType::Integer => text.parse().map(Cell::Integer).map_err(|_| bad("integer")),
        ColumnType::Timestamp => parse_timestamp(text)
            .map(Cell::Timestamp)
            .ok_or_else(|| bad("timestamp")),
        ColumnType::Date => parse_date(text).map(Cell::Date).ok_or_else(|| bad("date")),
        ColumnType::OptionalDecimalList => text
            .split_ascii_whitespace()
            .map(|t| {
                if t == MISSING_SAMPLE {
                    Ok(None)
                } else {
                    t.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .map(Some)
                        .ok_or_else(|| bad("sample"))
                }
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Cell::Waveform),
    }
}

/// Works out the schema and columns from the optional `#schema` line and
/// the header row.
fn resolve_columns(
    declared: Option<SchemaKind>,
    header: &[String],
) -> Result<(SchemaKind, Vec<Column>), ExportError> {
    let matches = |kind: SchemaKind| {
        let fixed = kind.columns();
        if kind == SchemaKind::UserFlat {
            header.len() >= fixed.len() && fixed.iter().zip(header).all(|(c, h)| c.name == *h)
        } else {
            fixed.len() == header.len() && fixed.iter().zip(header).all(|(c, h)| c.name == *h)
        }
    };
    let kind = match declared {
        Some(kind) if matches(kind) => kind,
        Some(kind) => {
            return Err(ExportError::Header(format!(
                "columns do not match {kind}: {}",
                header.join(",")
            )))
        }
        None => SchemaKind::ALL
            .into_iter()
            .find(|k| matches(*k))
            .ok_or_else(|| {
                ExportError::Header(format!("no schema has columns {}", header.join(",")))
            })?,
    };
    let mut columns = kind.columns();
    if kind == SchemaKind::UserFlat {
        columns.extend(
            header[columns.len()..]
                .iter()
                .map(|h| Column::new(h, ColumnType::String)),
        );
    }
    Ok((kind, columns))
}

/// Parses CSV produced by [`export_csv`] (or any CSV whose header matches a
/// schema) back into a table.
pub fn parse_csv(bytes: &[u8]) -> Result<FlatTable, ExportError> {
    let text = std::str::from_utf8(bytes).map_err(|e| ExportError::Header(e.to_string()))?;
    let mut declared = None;
    let mut provenance = None;
    let mut rest = text;
    let mut comment_lines = 0u64;
    while rest.starts_with('#') {
        let (line, tail) = rest.split_once('\n').unwrap_or((rest, ""));
        let line = line.trim_end_matches('\r');
        if let Some(kind) = line.strip_prefix(SCHEMA_PREFIX) {
            declared = Some(kind.parse::<SchemaKind>()?);
        } else if let Some(json) = line.strip_prefix(PROVENANCE_PREFIX) {
            let map: std::collections::BTreeMap<String, String> = serde_json::from_str(json)
                .map_err(|e| ExportError::Header(format!("provenance: {e}")))?;
            provenance = Some(map);
        }
        rest = tail;
        comment_lines += 1;
    }

    let mut reader = csv::ReaderBuilder::new().from_reader(rest.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let (kind, columns) = resolve_columns(declared, &header)?;
    let mut table = FlatTable::with_columns(kind, columns.clone())?;
    for (k, v) in provenance.into_iter().flatten() {
        table.set_provenance(k, v);
    }
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line()) + comment_lines;
        let row = record
            .iter()
            .zip(&columns)
            .map(|(text, col)| {
                decode(text, col.ty).map_err(|message| ExportError::Cell {
                    line,
                    column: col.name.clone(),
                    message,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        table.push_row(row)?;
    }
    Ok(table)
}

pub fn read_csv_file(path: impl AsRef<Path>) -> Result<FlatTable, ExportError> {
    let path = path.as_ref();
    parse_csv(&fs::read(path).map_err(io_err(path))?)
}

/// Writes a chart's canonical JSON, returning the byte count.
pub fn export_chart_json(spec: &ChartSpec, mut writer: impl Write) -> Result<usize, ExportError> {
    let json = spec.to_canonical_json();
    writer
        .write_all(json.as_bytes())
        .map_err(|source| ExportError::Io {
            path: "<writer>".into(),
            source,
        })?;
    Ok(json.len())
}

pub fn export_chart_json_file(
    spec: &ChartSpec,
    path: impl AsRef<Path>,
) -> Result<usize, ExportError> {
    let path = path.as_ref();
    let json = spec.to_canonical_json();
    fs::write(path, &json).map_err(io_err(path))?;
    Ok(json.len())
}
