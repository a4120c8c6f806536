use std::collections::{BTreeMap, BTreeSet};

use super::chart::{Annotation, Axis, ChartKind, ChartSpec, Point, Series};
use super::ExploreError;
use crate::fhir::MetricKind;
use crate::flatten::{EcgRow, FlatTable, ObservationRow, SchemaKind};
use crate::process::{aggregate_daily_mean, aggregate_daily_sum, DailyAgg};
use crate::time::format_date;

fn metric_rows(table: &FlatTable, metric: &MetricKind) -> Result<FlatTable, ExploreError> {
    table.expect_schema(SchemaKind::ObservationFlat)?;
    let label = metric.label();
    Ok(table.filter_rows(|r| r[2].as_text() == Some(label)))
}

fn shared_unit(rows: &[ObservationRow]) -> String {
    let units: BTreeSet<&str> = rows.iter().map(|r| r.unit.as_str()).collect();
    if units.len() == 1 {
        units.into_iter().next().unwrap_or_default().to_string()
    } else {
        String::new()
    }
}

/// Line chart of daily totals or means of one metric, one series per user
/// (sorted by user id), x = UTC date.
pub fn build_daily_series(
    table: &FlatTable,
    metric: &MetricKind,
    agg: DailyAgg,
    users: Option<&BTreeSet<String>>,
) -> Result<ChartSpec, ExploreError> {
    let mut selected = metric_rows(table, metric)?;
    if let Some(users) = users {
        selected = crate::process::select_users(&selected, users);
    }
    if selected.is_empty() {
        return Err(ExploreError::EmptySelection);
    }
    let daily: Vec<ObservationRow> = match agg {
        DailyAgg::Sum => aggregate_daily_sum(&selected)?,
        DailyAgg::Mean => aggregate_daily_mean(&selected)?,
    }
    .typed_rows()?;

    let heading = match agg {
        DailyAgg::Sum => "Daily total",
        DailyAgg::Mean => "Daily mean",
    };
    let mut spec = ChartSpec::new(
        ChartKind::Line,
        format!("{heading} {}", metric.label().to_lowercase()),
        Axis::new("Date", "UTC day"),
        Axis::new(metric.label(), shared_unit(&daily)),
    );
    let mut by_user: BTreeMap<&str, Vec<Point>> = BTreeMap::new();
    for r in &daily {
        by_user.entry(&r.user_id).or_default().push(Point::category(
            format_date(&r.effective_date.date_naive()),
            r.value,
        ));
    }
    spec.series = by_user
        .into_iter()
        .map(|(user, points)| Series {
            name: user.to_string(),
            points,
        })
        .collect();
    Ok(spec)
}

/// Strip plot of every raw measurement of one metric: x = user, y = value.
/// Points are grouped by user id, table order within a user.
pub fn build_distribution(
    table: &FlatTable,
    metric: &MetricKind,
) -> Result<ChartSpec, ExploreError> {
    let mut rows: Vec<ObservationRow> = metric_rows(table, metric)?.typed_rows()?;
    rows.sort_by(|a, b| a.user_id.cmp(&b.user_id));
    let mut spec = ChartSpec::new(
        ChartKind::Scatter,
        format!(
            "Distribution of {} measurements",
            metric.label().to_lowercase()
        ),
        Axis::new("User", ""),
        Axis::new(metric.label(), shared_unit(&rows)),
    );
    spec.series.push(Series {
        name: metric.label().to_string(),
        points: rows
            .iter()
            .map(|r| Point::category(&r.user_id, r.value))
            .collect(),
    });
    Ok(spec)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubjectCount {
    pub user_id: String,
    pub ecg_count: usize,
}

/// ECG recordings per user, ordered by count descending then user id.
pub fn ecg_counts_per_subject(
    table: &FlatTable,
) -> Result<(Vec<SubjectCount>, ChartSpec), ExploreError> {
    table.expect_schema(SchemaKind::EcgFlat)?;
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for row in table.rows() {
        *counts.entry(table.user_id(row)).or_default() += 1;
    }
    let mut counts: Vec<SubjectCount> = counts
        .into_iter()
        .map(|(user_id, ecg_count)| SubjectCount {
            user_id: user_id.to_string(),
            ecg_count,
        })
        .collect();
    counts.sort_by(|a, b| {
        b.ecg_count
            .cmp(&a.ecg_count)
            .then_with(|| a.user_id.cmp(&b.user_id))
    });

    let mut spec = ChartSpec::new(
        ChartKind::Bar,
        "Number of ECG recordings per subject",
        Axis::new("Subject", ""),
        Axis::new("ECG recordings", "count"),
    );
    spec.series.push(Series {
        name: "ECG recordings".into(),
        points: counts
            .iter()
            .map(|c| Point::category(&c.user_id, c.ecg_count as f64))
            .collect(),
    });
    Ok((counts, spec))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectWeeks {
    pub user_id: String,
    pub weeks: f64,
}

/// Weeks between each user's first and last dated row in `table`.
pub fn time_in_study_weeks(
    table: &FlatTable,
) -> Result<(Vec<SubjectWeeks>, ChartSpec), ExploreError> {
    time_in_study_weeks_across(&[table])
}

/// Like [`time_in_study_weeks`], pooling each user's rows over several
/// tables (observations, ECGs, questionnaires). Users are sorted by id;
/// undated rows are ignored.
pub fn time_in_study_weeks_across(
    tables: &[&FlatTable],
) -> Result<(Vec<SubjectWeeks>, ChartSpec), ExploreError> {
    let mut spans: BTreeMap<String, (chrono::NaiveDate, chrono::NaiveDate)> = BTreeMap::new();
    for table in tables {
        let Some(col) = table.schema().date_column() else {
            return Err(crate::process::ProcessError::NoDateColumn(table.schema()).into());
        };
        let idx = table.column_index(col).expect("schema column present");
        for row in table.rows() {
            let Some(day) = row[idx].as_timestamp().map(|t| t.date_naive()) else {
                continue;
            };
            spans
                .entry(table.user_id(row).to_string())
                .and_modify(|(lo, hi)| {
                    *lo = (*lo).min(day);
                    *hi = (*hi).max(day);
                })
                .or_insert((day, day));
        }
    }
    let weeks: Vec<SubjectWeeks> = spans
        .into_iter()
        .map(|(user_id, (lo, hi))| SubjectWeeks {
            user_id,
            weeks: (hi - lo).num_days() as f64 / 7.0,
        })
        .collect();

    let mut spec = ChartSpec::new(
        ChartKind::Bar,
        "Time in study per subject",
        Axis::new("Subject", ""),
        Axis::new("Time in study", "weeks"),
    );
    spec.series.push(Series {
        name: "Time in study".into(),
        points: weeks
            .iter()
            .map(|w| Point::category(&w.user_id, w.weeks))
            .collect(),
    });
    Ok((weeks, spec))
}

/// Per-subject study summary joining ECG counts and time in study.
#[derive(Debug, Clone, PartialEq)]
pub struct StudySummary {
    pub per_subject: Vec<SubjectSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectSummary {
    pub user_id: String,
    pub ecg_count: usize,
    pub weeks_in_study: f64,
}

impl StudySummary {
    /// Users appearing in either list, sorted by id; missing parts are zero.
    pub fn join(counts: &[SubjectCount], weeks: &[SubjectWeeks]) -> Self {
        let mut per: BTreeMap<&str, SubjectSummary> = BTreeMap::new();
        let blank = |u: &str| SubjectSummary {
            user_id: u.to_string(),
            ecg_count: 0,
            weeks_in_study: 0.0,
        };
        for c in counts {
            per.entry(&c.user_id)
                .or_insert_with(|| blank(&c.user_id))
                .ecg_count = c.ecg_count;
        }
        for w in weeks {
            per.entry(&w.user_id)
                .or_insert_with(|| blank(&w.user_id))
                .weeks_in_study = w.weeks;
        }
        Self {
            per_subject: per.into_values().collect(),
        }
    }
}

/// Time-domain trace of one ECG recording, optionally cut to
/// `[start, end)` seconds. Missing samples become null points (gaps).
pub fn build_ecg_trace(
    row: &EcgRow,
    window: Option<(f64, f64)>,
) -> Result<ChartSpec, ExploreError> {
    let (Some(samples), Some(fs)) = (&row.ecg_recording, row.sampling_frequency_hz) else {
        return Err(ExploreError::NoWaveform(row.resource_id.clone()));
    };
    if samples.is_empty() || fs.is_nan() || fs <= 0.0 {
        return Err(ExploreError::NoWaveform(row.resource_id.clone()));
    }
    let duration = samples.len() as f64 / fs;
    let range = match window {
        None => 0..samples.len(),
        Some((start, end)) => {
            if !(start < end && start >= 0.0 && end <= duration) {
                return Err(ExploreError::BadWindow {
                    start,
                    end,
                    duration,
                });
            }
            let first = (start * fs).ceil() as usize;
            let last = ((end * fs).ceil() as usize).min(samples.len());
            first..last
        }
    };

    let mut spec = ChartSpec::new(
        ChartKind::EcgTrace,
        format!("ECG {}", format_date(&row.effective_date.date_naive())),
        Axis::new("Time", "s"),
        Axis::new("Voltage", &row.unit),
    );
    spec.sampling_frequency_hz = Some(fs);
    if !row.ecg_classification.is_empty() {
        spec.annotations.push(Annotation {
            label: "classification".into(),
            text: row.ecg_classification.clone(),
        });
    }
    if let Some(bpm) = row.heart_rate_bpm {
        spec.annotations.push(Annotation {
            label: "heartRate".into(),
            text: format!("{bpm} {}", row.heart_rate_unit)
                .trim_end()
                .to_string(),
        });
    }
    spec.series.push(Series {
        name: row.resource_id.clone(),
        points: range
            .map(|i| Point::number(i as f64 / fs, samples[i]))
            .collect(),
    });
    Ok(spec)
}
