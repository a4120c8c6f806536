use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Which fixed schema a table follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SchemaKind {
    ObservationFlat,
    EcgFlat,
    QuestionnaireFlat,
    ScoreFlat,
    UserFlat,
}

impl SchemaKind {
    pub const ALL: [SchemaKind; 5] = [
        SchemaKind::ObservationFlat,
        SchemaKind::EcgFlat,
        SchemaKind::QuestionnaireFlat,
        SchemaKind::ScoreFlat,
        SchemaKind::UserFlat,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SchemaKind::ObservationFlat => "ObservationFlat",
            SchemaKind::EcgFlat => "EcgFlat",
            SchemaKind::QuestionnaireFlat => "QuestionnaireFlat",
            SchemaKind::ScoreFlat => "ScoreFlat",
            SchemaKind::UserFlat => "UserFlat",
        }
    }

    /// Fixed column list. `UserFlat` returns only its leading columns; the
    /// demographic columns that follow depend on the data.
    pub fn columns(self) -> Vec<Column> {
        use ColumnType::*;
        let spec: &[(&str, ColumnType)] = match self {
            SchemaKind::ObservationFlat => &OBSERVATION_COLUMNS,
            SchemaKind::EcgFlat => &[
                ("userId", String),
                ("resourceId", String),
                ("quantityName", String),
                ("unit", String),
                ("value", Decimal),
                ("loincCode", String),
                ("displayName", String),
                ("deviceCode", String),
                ("effectiveDate", Timestamp),
                ("numberOfMeasurements", Integer),
                ("samplingFrequencyHz", Decimal),
                ("ecgClassification", String),
                ("heartRateBpm", Decimal),
                ("heartRateUnit", String),
                ("ecgRecording", OptionalDecimalList),
            ],
            SchemaKind::QuestionnaireFlat => &[
                ("userId", String),
                ("resourceId", String),
                ("authoredDate", Timestamp),
                ("questionnaireTitle", String),
                ("questionId", String),
                ("questionText", String),
                ("answerCode", String),
                ("answerText", String),
            ],
            SchemaKind::ScoreFlat => &[
                ("userId", String),
                ("resourceId", String),
                ("authoredDate", Timestamp),
                ("instrument", String),
                ("totalScore", Integer),
                ("severityBand", String),
            ],
            SchemaKind::UserFlat => &[("userId", String), ("birthDate", Date)],
        };
        spec.iter().map(|(n, t)| Column::new(*n, *t)).collect()
    }

    /// Column holding the row's point in time, if the schema has one.
    pub fn date_column(self) -> Option<&'static str> {
        match self {
            SchemaKind::ObservationFlat | SchemaKind::EcgFlat => Some("effectiveDate"),
            SchemaKind::QuestionnaireFlat | SchemaKind::ScoreFlat => Some("authoredDate"),
            SchemaKind::UserFlat => None,
        }
    }

    /// Extra per-row key making (userId, resourceId, key) unique.
    fn discriminator_column(self) -> Option<&'static str> {
        match self {
            SchemaKind::QuestionnaireFlat => Some("questionId"),
            _ => None,
        }
    }
}

const OBSERVATION_COLUMNS: [(&str, ColumnType); 9] = [
    ("userId", ColumnType::String),
    ("resourceId", ColumnType::String),
    ("quantityName", ColumnType::String),
    ("unit", ColumnType::String),
    ("value", ColumnType::Decimal),
    ("loincCode", ColumnType::String),
    ("displayName", ColumnType::String),
    ("deviceCode", ColumnType::String),
    ("effectiveDate", ColumnType::Timestamp),
];

impl fmt::Display for SchemaKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SchemaKind {
    type Err = TableError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| TableError::UnknownSchema(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ColumnType {
    String,
    Decimal,
    Integer,
    Timestamp,
    Date,
    OptionalDecimalList,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub ty: ColumnType,
}

impl Column {
    pub fn new(name: impl Into<String>, ty: ColumnType) -> Self {
        Self {
            name: name.into(),
            ty,
        }
    }
}

/// One table cell. `Null` is allowed in every non-string column; string
/// columns use the empty string instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Cell {
    Null,
    Text(String),
    Decimal(f64),
    Integer(i64),
    Timestamp(DateTime<Utc>),
    Date(NaiveDate),
    Waveform(Vec<Option<f64>>),
}

impl Cell {
    pub fn text(s: impl Into<String>) -> Self {
        Cell::Text(s.into())
    }

    pub fn opt_decimal(v: Option<f64>) -> Self {
        v.map_or(Cell::Null, Cell::Decimal)
    }

    fn fits(&self, ty: ColumnType) -> bool {
        matches!(
            (self, ty),
            (Cell::Text(_), ColumnType::String)
                | (Cell::Null, ColumnType::Decimal)
                | (Cell::Null, ColumnType::Integer)
                | (Cell::Null, ColumnType::Timestamp)
                | (Cell::Null, ColumnType::Date)
                | (Cell::Null, ColumnType::OptionalDecimalList)
                | (Cell::Integer(_), ColumnType::Integer)
                | (Cell::Timestamp(_), ColumnType::Timestamp)
                | (Cell::Date(_), ColumnType::Date)
                | (Cell::Waveform(_), ColumnType::OptionalDecimalList)
        ) || matches!((self, ty), (Cell::Decimal(v), ColumnType::Decimal) if v.is_finite())
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Cell::Text(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_decimal(&self) -> Option<f64> {
        match self {
            Cell::Decimal(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_integer(&self) -> Option<i64> {
        match self {
            Cell::Integer(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_timestamp(&self) -> Option<DateTime<Utc>> {
        match self {
            Cell::Timestamp(t) => Some(*t),
            _ => None,
        }
    }

    pub fn as_date(&self) -> Option<NaiveDate> {
        match self {
            Cell::Date(d) => Some(*d),
            Cell::Timestamp(t) => Some(t.date_naive()),
            _ => None,
        }
    }

    pub fn as_waveform(&self) -> Option<&[Option<f64>]> {
        match self {
            Cell::Waveform(w) => Some(w),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TableError {
    #[error("row has {got} cells, table has {expected} columns")]
    Arity { expected: usize, got: usize },
    #[error("cell {value} does not fit column {column} ({ty:?})")]
    CellType {
        column: String,
        ty: ColumnType,
        value: String,
    },
    #[error("duplicate row key (userId={user_id}, resourceId={resource_id}{discriminator})")]
    DuplicateRow {
        user_id: String,
        resource_id: String,
        discriminator: String,
    },
    #[error("expected a {expected} table, got {got}")]
    WrongSchema {
        expected: SchemaKind,
        got: SchemaKind,
    },
    #[error("unknown schema {0:?}")]
    UnknownSchema(String),
    #[error("column layout does not match schema {0}")]
    ColumnMismatch(SchemaKind),
    #[error("required cell {0} is empty")]
    MissingCell(String),
}

/// Schema-tagged table of flattened resources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatTable {
    schema: SchemaKind,
    columns: Vec<Column>,
    rows: Vec<Vec<Cell>>,
    provenance: BTreeMap<String, String>,
}

impl FlatTable {
    /// Empty table with the schema's fixed columns.
    pub fn new(schema: SchemaKind) -> Self {
        Self {
            schema,
            columns: schema.columns(),
            rows: Vec::new(),
            provenance: BTreeMap::new(),
        }
    }

    /// Empty `UserFlat` table with one string column per demographic key.
    pub fn user_table<S: AsRef<str>>(demographic_keys: impl IntoIterator<Item = S>) -> Self {
        let mut table = Self::new(SchemaKind::UserFlat);
        let mut keys: Vec<String> = demographic_keys
            .into_iter()
            .map(|k| k.as_ref().to_string())
            .collect();
        keys.sort();
        keys.dedup();
        table
            .columns
            .extend(keys.into_iter().map(|k| Column::new(k, ColumnType::String)));
        table
    }

    /// Builds a table with an explicit column list, checking it against the schema.
    pub fn with_columns(schema: SchemaKind, columns: Vec<Column>) -> Result<Self, TableError> {
        let fixed = schema.columns();
        let ok = match schema {
            SchemaKind::UserFlat => {
                columns.len() >= fixed.len()
                    && columns[..fixed.len()] == fixed[..]
                    && columns[fixed.len()..]
                        .iter()
                        .all(|c| c.ty == ColumnType::String)
            }
            _ => columns == fixed,
        };
        if !ok {
            return Err(TableError::ColumnMismatch(schema));
        }
        Ok(Self {
            schema,
            columns,
            rows: Vec::new(),
            provenance: BTreeMap::new(),
        })
    }

    pub fn schema(&self) -> SchemaKind {
        self.schema
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column_names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn rows(&self) -> &[Vec<Cell>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn provenance(&self) -> &BTreeMap<String, String> {
        &self.provenance
    }

    pub fn set_provenance(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.provenance.insert(key.into(), value.into());
    }

    pub fn push_row(&mut self, row: Vec<Cell>) -> Result<(), TableError> {
        self.check_row(&row)?;
        self.rows.push(row);
        Ok(())
    }

    fn check_row(&self, row: &[Cell]) -> Result<(), TableError> {
        if row.len() != self.columns.len() {
            return Err(TableError::Arity {
                expected: self.columns.len(),
                got: row.len(),
            });
        }
        for (cell, col) in row.iter().zip(&self.columns) {
            if !cell.fits(col.ty) {
                return Err(TableError::CellType {
                    column: col.name.clone(),
                    ty: col.ty,
                    value: format!("{cell:?}"),
                });
            }
        }
        Ok(())
    }

    /// Checks arity, cell types and row-key uniqueness.
    pub fn validate(&self) -> Result<(), TableError> {
        for row in &self.rows {
            self.check_row(row)?;
        }
        let user = self.column_index("userId");
        let resource = self.column_index("resourceId");
        let disc = self
            .schema
            .discriminator_column()
            .and_then(|c| self.column_index(c));
        let text = |row: &[Cell], idx: Option<usize>| {
            idx.and_then(|i| row[i].as_text())
                .unwrap_or_default()
                .to_string()
        };
        let mut seen = HashSet::new();
        for row in &self.rows {
            let key = (text(row, user), text(row, resource), text(row, disc));
            if !seen.insert(key.clone()) {
                return Err(TableError::DuplicateRow {
                    user_id: key.0,
                    resource_id: key.1,
                    discriminator: if disc.is_some() {
                        format!(", questionId={}", key.2)
                    } else {
                        String::new()
                    },
                });
            }
        }
        Ok(())
    }

    /// Same schema and provenance, rows for which `keep` holds, order preserved.
    pub fn filter_rows(&self, mut keep: impl FnMut(&[Cell]) -> bool) -> FlatTable {
        FlatTable {
            schema: self.schema,
            columns: self.columns.clone(),
            rows: self.rows.iter().filter(|r| keep(r)).cloned().collect(),
            provenance: self.provenance.clone(),
        }
    }

    /// Same schema and provenance, no rows.
    pub fn empty_like(&self) -> FlatTable {
        self.filter_rows(|_| false)
    }

    pub fn expect_schema(&self, expected: SchemaKind) -> Result<(), TableError> {
        if self.schema == expected {
            Ok(())
        } else {
            Err(TableError::WrongSchema {
                expected,
                got: self.schema,
            })
        }
    }

    /// `userId` of a row (every schema has one as its first column).
    pub fn user_id<'a>(&self, row: &'a [Cell]) -> &'a str {
        row[0].as_text().unwrap_or_default()
    }

    /// Distinct user ids in first-seen order.
    pub fn user_ids(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.rows
            .iter()
            .map(|r| self.user_id(r).to_string())
            .filter(|u| seen.insert(u.clone()))
            .collect()
    }

    /// Typed view over every row.
    pub fn typed_rows<R: TableRow>(&self) -> Result<Vec<R>, TableError> {
        self.expect_schema(R::SCHEMA)?;
        self.rows.iter().map(|r| R::from_cells(r)).collect()
    }

    pub fn from_rows<R: TableRow>(rows: impl IntoIterator<Item = R>) -> Result<Self, TableError> {
        let mut table = FlatTable::new(R::SCHEMA);
        for r in rows {
            table.push_row(r.to_cells())?;
        }
        Ok(table)
    }
}

/// Conversion between a typed row struct and a fixed-schema row.
pub trait TableRow: Sized {
    const SCHEMA: SchemaKind;
    fn to_cells(&self) -> Vec<Cell>;
    fn from_cells(cells: &[Cell]) -> Result<Self, TableError>;
}

fn text_at(cells: &[Cell], i: usize) -> String {
    cells[i].as_text().unwrap_or_default().to_string()
}

fn required<T>(v: Option<T>, column: &str) -> Result<T, TableError> {
    v.ok_or_else(|| TableError::MissingCell(column.to_string()))
}

fn check_arity(cells: &[Cell], schema: SchemaKind) -> Result<(), TableError> {
    let expected = schema.columns().len();
    if cells.len() != expected {
        return Err(TableError::Arity {
            expected,
            got: cells.len(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationRow {
    pub user_id: String,
    pub resource_id: String,
    pub quantity_name: String,
    pub unit: String,
    pub value: f64,
    pub loinc_code: String,
    pub display_name: String,
    pub device_code: String,
    pub effective_date: DateTime<Utc>,
}

impl TableRow for ObservationRow {
    const SCHEMA: SchemaKind = SchemaKind::ObservationFlat;

    fn to_cells(&self) -> Vec<Cell> {
        vec![
            Cell::text(&self.user_id),
            Cell::text(&self.resource_id),
            Cell::text(&self.quantity_name),
            Cell::text(&self.unit),
            Cell::Decimal(self.value),
            Cell::text(&self.loinc_code),
            Cell::text(&self.display_name),
            Cell::text(&self.device_code),
            Cell::Timestamp(self.effective_date),
        ]
    }

    fn from_cells(c: &[Cell]) -> Result<Self, TableError> {
        check_arity(c, Self::SCHEMA)?;
        Ok(Self {
            user_id: text_at(c, 0),
            resource_id: text_at(c, 1),
            quantity_name: text_at(c, 2),
            unit: text_at(c, 3),
            value: required(c[4].as_decimal(), "value")?,
            loinc_code: text_at(c, 5),
            display_name: text_at(c, 6),
            device_code: text_at(c, 7),
            effective_date: required(c[8].as_timestamp(), "effectiveDate")?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EcgRow {
    pub user_id: String,
    pub resource_id: String,
    pub quantity_name: String,
    /// Unit of the waveform samples.
    pub unit: String,
    /// Device-reported mean heart rate, same as `heart_rate_bpm`.
    pub value: Option<f64>,
    pub loinc_code: String,
    pub display_name: String,
    pub device_code: String,
    pub effective_date: DateTime<Utc>,
    pub number_of_measurements: i64,
    pub sampling_frequency_hz: Option<f64>,
    pub ecg_classification: String,
    pub heart_rate_bpm: Option<f64>,
    pub heart_rate_unit: String,
    pub ecg_recording: Option<Vec<Option<f64>>>,
}

impl TableRow for EcgRow {
    const SCHEMA: SchemaKind = SchemaKind::EcgFlat;

    fn to_cells(&self) -> Vec<Cell> {
        vec![
            Cell::text(&self.user_id),
            Cell::text(&self.resource_id),
            Cell::text(&self.quantity_name),
            Cell::text(&self.unit),
            Cell::opt_decimal(self.value),
            Cell::text(&self.loinc_code),
            Cell::text(&self.display_name),
            Cell::text(&self.device_code),
            Cell::Timestamp(self.effective_date),
            Cell::Integer(self.number_of_measurements),
            Cell::opt_decimal(self.sampling_frequency_hz),
            Cell::text(&self.ecg_classification),
            Cell::opt_decimal(self.heart_rate_bpm),
            Cell::text(&self.heart_rate_unit),
            self.ecg_recording
                .as_ref()
                .map_or(Cell::Null, |w| Cell::Waveform(w.clone())),
        ]
    }

    fn from_cells(c: &[Cell]) -> Result<Self, TableError> {
        check_arity(c, Self::SCHEMA)?;
        Ok(Self {
            user_id: text_at(c, 0),
            resource_id: text_at(c, 1),
            quantity_name: text_at(c, 2),
            unit: text_at(c, 3),
            value: c[4].as_decimal(),
            loinc_code: text_at(c, 5),
            display_name: text_at(c, 6),
            device_code: text_at(c, 7),
            effective_date: required(c[8].as_timestamp(), "effectiveDate")?,
            number_of_measurements: required(c[9].as_integer(), "numberOfMeasurements")?,
            sampling_frequency_hz: c[10].as_decimal(),
            ecg_classification: text_at(c, 11),
            heart_rate_bpm: c[12].as_decimal(),
            heart_rate_unit: text_at(c, 13),
            ecg_recording: c[14].as_waveform().map(<[Option<f64>]>::to_vec),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuestionnaireRow {
    pub user_id: String,
    pub resource_id: String,
    pub authored_date: DateTime<Utc>,
    pub questionnaire_title: String,
    pub question_id: String,
    pub question_text: String,
    pub answer_code: String,
    pub answer_text: String,
}

impl TableRow for QuestionnaireRow {
    const SCHEMA: SchemaKind = SchemaKind::QuestionnaireFlat;

    fn to_cells(&self) -> Vec<Cell> {
        vec![
            Cell::text(&self.user_id),
            Cell::text(&self.resource_id),
            Cell::Timestamp(self.authored_date),
            Cell::text(&self.questionnaire_title),
            Cell::text(&self.question_id),
            Cell::text(&self.question_text),
            Cell::text(&self.answer_code),
            Cell::text(&self.answer_text),
        ]
    }

    fn from_cells(c: &[Cell]) -> Result<Self, TableError> {
        check_arity(c, Self::SCHEMA)?;
        Ok(Self {
            user_id: text_at(c, 0),
            resource_id: text_at(c, 1),
            authored_date: required(c[2].as_timestamp(), "authoredDate")?,
            questionnaire_title: text_at(c, 3),
            question_id: text_at(c, 4),
            question_text: text_at(c, 5),
            answer_code: text_at(c, 6),
            answer_text: text_at(c, 7),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn obs_row(user: &str, id: &str) -> ObservationRow {
        ObservationRow {
            user_id: user.into(),
            resource_id: id.into(),
            quantity_name: "Step Count".into(),
            unit: "steps".into(),
            value: 10.0,
            loinc_code: "55423-8".into(),
            display_name: "Steps".into(),
            device_code: String::new(),
            effective_date: Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap(),
        }
    }

    #[test]
    fn observation_header_order_is_fixed() {
        let t = FlatTable::new(SchemaKind::ObservationFlat);
        assert_eq!(
            t.column_names(),
            [
                "userId",
                "resourceId",
                "quantityName",
                "unit",
                "value",
                "loincCode",
                "displayName",
                "deviceCode",
                "effectiveDate"
            ]
        );
        let ecg = FlatTable::new(SchemaKind::EcgFlat);
        assert_eq!(&ecg.column_names()[..9], &t.column_names()[..]);
        assert_eq!(
            &ecg.column_names()[9..],
            [
                "numberOfMeasurements",
                "samplingFrequencyHz",
                "ecgClassification",
                "heartRateBpm",
                "heartRateUnit",
                "ecgRecording"
            ]
        );
    }

    #[test]
    fn rejects_bad_arity_and_types() {
        let mut t = FlatTable::new(SchemaKind::ObservationFlat);
        assert!(matches!(
            t.push_row(vec![Cell::text("a")]),
            Err(TableError::Arity {
                expected: 9,
                got: 1
            })
        ));
        let mut cells = obs_row("a", "1").to_cells();
        cells[4] = Cell::text("ten");
        assert!(matches!(
            t.push_row(cells),
            Err(TableError::CellType { .. })
        ));
        let mut cells = obs_row("a", "1").to_cells();
        cells[4] = Cell::Decimal(f64::NAN);
        assert!(t.push_row(cells).is_err());
        let mut cells = obs_row("a", "1").to_cells();
        cells[0] = Cell::Null;
        assert!(t.push_row(cells).is_err());
    }

    #[test]
    fn validate_detects_duplicate_keys() {
        let t = FlatTable::from_rows([obs_row("a", "1"), obs_row("a", "1")]).unwrap();
        assert!(matches!(t.validate(), Err(TableError::DuplicateRow { .. })));
        let t = FlatTable::from_rows([obs_row("a", "1"), obs_row("b", "1")]).unwrap();
        assert!(t.validate().is_ok());
    }

    #[test]
    fn typed_rows_round_trip() {
        let rows = vec![obs_row("a", "1"), obs_row("b", "2")];
        let t = FlatTable::from_rows(rows.clone()).unwrap();
        assert_eq!(t.typed_rows::<ObservationRow>().unwrap(), rows);
        assert!(matches!(
            t.typed_rows::<EcgRow>(),
            Err(TableError::WrongSchema { .. })
        ));
    }

    #[test]
    fn user_table_columns_are_sorted_and_checked() {
        let t = FlatTable::user_table(["zip", "gender", "gender"]);
        assert_eq!(t.column_names(), ["userId", "birthDate", "gender", "zip"]);
        assert!(FlatTable::with_columns(SchemaKind::UserFlat, t.columns().to_vec()).is_ok());
        assert!(
            FlatTable::with_columns(SchemaKind::ObservationFlat, t.columns().to_vec()).is_err()
        );
    }
}
