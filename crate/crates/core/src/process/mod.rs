//! Table-to-table processing: selection, outlier filtering, daily
//! aggregation, the activity index, questionnaire scoring and masking.

mod activity;
mod aggregate;
mod mask;
mod outliers;
mod scoring;
mod select;

use chrono::NaiveDate;
use thiserror::Error;

use crate::flatten::{Cell, FlatTable, SchemaKind, TableError};

pub use activity::{activity_index, ACTIVITY_INDEX_NAME, ACTIVITY_WINDOW_DAYS};
pub use aggregate::{aggregate_daily_mean, aggregate_daily_sum, DailyAgg};
pub use mask::{mask_identifiers, mask_identifiers_with_audit, pseudonym, MaskKey, MASK_KEY_ENV};
pub use outliers::{filter_outliers, quantile, OutlierMode, OutlierPolicy};
pub use scoring::{
    normalize_instrument, phq9_definition, score_phq9, Phq9Scorer, ResponseGroup, RiskScoreRow,
    ScoreError, ScoreFn, ScoreRegistry, ScoreRejection, ScoreReport, SeverityBand, SeverityBands,
    PHQ9_INSTRUMENT,
};
pub use select::{select_date_range, select_users};

#[derive(Debug, Error)]
pub enum ProcessError {
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("invalid date range: {from} is after {to}")]
    InvalidRange { from: NaiveDate, to: NaiveDate },
    #[error("{0} tables have no date column")]
    NoDateColumn(SchemaKind),
    #[error("invalid outlier policy: {0}")]
    InvalidPolicy(String),
    #[error("invalid severity bands: {0}")]
    InvalidBands(String),
    #[error("mask key must be at least 16 bytes, got {0}")]
    WeakKey(usize),
    #[error("mask key is not valid hex")]
    BadKeyHex,
    #[error("mask key not set; export {MASK_KEY_ENV} as hex")]
    MissingKey,
    #[error("pseudonym collision on {0}")]
    MaskCollision(String),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error("config {path}: {message}")]
    Config { path: String, message: String },
}

/// UTC calendar date of a row, read from the schema's date column.
pub(crate) fn row_date(table: &FlatTable, row: &[Cell]) -> Option<NaiveDate> {
    let idx = table.column_index(table.schema().date_column()?)?;
    row[idx].as_timestamp().map(|t| t.date_naive())
}

pub(crate) fn read_config<T: serde::de::DeserializeOwned>(
    path: &std::path::Path,
) -> Result<T, ProcessError> {
    let err = |message: String| ProcessError::Config {
        path: path.display().to_string(),
        message,
    };
    let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| err(e.to_string()))
}
