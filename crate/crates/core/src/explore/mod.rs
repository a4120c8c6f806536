//! Chart specifications, study summaries, SVG rendering and export.

mod builders;
mod chart;
pub mod export;
mod svg;

use thiserror::Error;

use crate::flatten::TableError;
use crate::process::ProcessError;

pub use builders::{
    build_daily_series, build_distribution, build_ecg_trace, ecg_counts_per_subject,
    time_in_study_weeks, time_in_study_weeks_across, StudySummary, SubjectCount, SubjectSummary,
    SubjectWeeks,
};
pub use chart::{Annotation, Axis, ChartKind, ChartSpec, Point, Series, XValue};
pub use export::{
    export_chart_json, export_chart_json_file, export_csv, export_csv_file, parse_csv,
    read_csv_file, table_to_csv, ExportError,
};
pub use svg::render_chart_svg;

#[derive(Debug, Error)]
pub enum ExploreError {
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Process(#[from] ProcessError),
    #[error("no rows match the selection")]
    EmptySelection,
    #[error("recording {0} has no waveform")]
    NoWaveform(String),
    #[error("window [{start}, {end}) s is outside the {duration} s recording or empty")]
    BadWindow { start: f64, end: f64, duration: f64 },
    #[error("chart has no series")]
    EmptySpec,
    #[error("invalid chart: {0}")]
    InvalidSpec(String),
}
