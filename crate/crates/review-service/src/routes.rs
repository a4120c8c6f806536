use std::collections::BTreeSet;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use chrono::{NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use fhirflow::explore::{ChartSpec, ExploreError};
use fhirflow::process::DailyAgg;
use fhirflow::MetricKind;

use crate::annotation::{AnnotationInput, AnnotationRecord};
use crate::snapshot::{AgeGroup, Recording};
use crate::AppState;

pub const DEFAULT_PAGE_SIZE: usize = 50;
pub const MAX_PAGE_SIZE: usize = 500;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn not_found(what: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("{what} not found"))
    }

    fn internal(err: impl std::fmt::Display) -> Self {
        tracing::error!(%err, "request failed");
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal error")
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (
            self.status,
            Json(serde_json::json!({ "error": self.message })),
        )
            .into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Annotation as sent to clients: the recording id is the masked one.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct AnnotationView {
    pub recording_resource_id: String,
    #[serde(flatten)]
    pub input: AnnotationInput,
    pub annotated_at: chrono::DateTime<Utc>,
}

impl AnnotationView {
    fn new(record: AnnotationRecord, masked_id: &str) -> Self {
        Self {
            recording_resource_id: masked_id.to_string(),
            input: record.input,
            annotated_at: record.annotated_at,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReviewStatus {
    Pending,
    Reviewed,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct RecordingSummary {
    pub resource_id: String,
    pub masked_user_id: String,
    pub date: NaiveDate,
    pub effective_date_time: chrono::DateTime<Utc>,
    pub ecg_classification: String,
    pub heart_rate_bpm: Option<f64>,
    pub age_group: AgeGroup,
    pub review_status: ReviewStatus,
    pub latest_annotation: Option<AnnotationView>,
}

fn summary(rec: &Recording, latest: Option<AnnotationRecord>) -> RecordingSummary {
    RecordingSummary {
        resource_id: rec.masked_id.clone(),
        masked_user_id: rec.masked_user.clone(),
        date: rec.date(),
        effective_date_time: rec.effective,
        ecg_classification: rec.classification.clone(),
        heart_rate_bpm: rec.heart_rate_bpm,
        age_group: rec.age_group,
        review_status: if latest.is_some() {
            ReviewStatus::Reviewed
        } else {
            ReviewStatus::Pending
        },
        latest_annotation: latest.map(|a| AnnotationView::new(a, &rec.masked_id)),
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RecordingQuery {
    status: Option<String>,
    classification: Option<String>,
    user: Option<String>,
    from: Option<String>,
    to: Option<String>,
    age_group: Option<String>,
    page: Option<String>,
    page_size: Option<String>,
}

/// Parsed `/api/recordings` filters. All present filters must hold.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct RecordingFilter {
    pub status: Option<ReviewStatus>,
    pub classification: Option<String>,
    pub user: Option<String>,
    pub from: Option<NaiveDate>,
    pub to: Option<NaiveDate>,
    pub age_group: Option<AgeGroup>,
}

impl RecordingFilter {
    pub fn matches(&self, rec: &Recording, status: ReviewStatus) -> bool {
        self.status.is_none_or(|s| s == status)
            && self
                .classification
                .as_ref()
                .is_none_or(|c| *c == rec.classification)
            && self.user.as_ref().is_none_or(|u| *u == rec.masked_user)
            && self.from.is_none_or(|f| rec.date() >= f)
            && self.to.is_none_or(|t| rec.date() <= t)
            && self.age_group.is_none_or(|g| g == rec.age_group)
    }
}

fn parse_date(name: &str, value: &str) -> ApiResult<NaiveDate> {
    NaiveDate::parse_from_str(value, "%Y-%m-%d")
        .map_err(|_| ApiError::bad_request(format!("{name} must be YYYY-MM-DD, got {value:?}")))
}

fn parse_positive(name: &str, value: Option<&str>, default: usize, max: usize) -> ApiResult<usize> {
    let Some(value) = value else {
        return Ok(default);
    };
    match value.parse::<usize>() {
        Ok(n) if (1..=max).contains(&n) => Ok(n),
        _ => Err(ApiError::bad_request(format!(
            "{name} must be an integer in 1..={max}, got {value:?}"
        ))),
    }
}

impl RecordingQuery {
    fn parse(self) -> ApiResult<(RecordingFilter, usize, usize)> {
        let status = match self.status.as_deref() {
            None => None,
            Some("Pending") => Some(ReviewStatus::Pending),
            Some("Reviewed") => Some(ReviewStatus::Reviewed),
            Some(other) => {
                return Err(ApiError::bad_request(format!(
                    "status must be Pending or Reviewed, got {other:?}"
                )))
            }
        };
        let from = self
            .from
            .as_deref()
            .map(|v| parse_date("from", v))
            .transpose()?;
        let to = self
            .to
            .as_deref()
            .map(|v| parse_date("to", v))
            .transpose()?;
        if let (Some(f), Some(t)) = (from, to) {
            if f > t {
                return Err(ApiError::bad_request(format!("from {f} is after to {t}")));
            }
        }
        let age_group = self
            .age_group
            .as_deref()
            .map(str::parse::<AgeGroup>)
            .transpose()
            .map_err(ApiError::bad_request)?;
        let page = parse_positive("page", self.page.as_deref(), 1, usize::MAX)?;
        let page_size = parse_positive(
            "pageSize",
            self.page_size.as_deref(),
            DEFAULT_PAGE_SIZE,
            MAX_PAGE_SIZE,
        )?;
        let filter = RecordingFilter {
            status,
            classification: self.classification,
            user: self.user,
            from,
            to,
            age_group,
        };
        Ok((filter, page, page_size))
    }
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct RecordingList {
    /// Recordings in the store, ignoring filters.
    pub total: usize,
    pub pending_count: usize,
    pub reviewed_count: usize,
    /// Recordings passing the filters, before paging.
    pub matched: usize,
    pub page: usize,
    pub page_size: usize,
    pub items: Vec<RecordingSummary>,
}

fn query_params<T>(query: Result<Query<T>, QueryRejection>) -> ApiResult<T> {
    query
        .map(|Query(q)| q)
        .map_err(|e| ApiError::bad_request(e.body_text()))
}

pub async fn list_recordings(
    State(state): State<AppState>,
    query: Result<Query<RecordingQuery>, QueryRejection>,
) -> ApiResult<Json<RecordingList>> {
    let (filter, page, page_size) = query_params(query)?.parse()?;
    let snapshot = state.snapshot();
    let mut latest = state.log().latest_by_recording();
    let mut pending = 0;
    let mut matched = Vec::new();
    for rec in &snapshot.recordings {
        let annotation = latest.remove(&rec.raw_id);
        let status = if annotation.is_some() {
            ReviewStatus::Reviewed
        } else {
            pending += 1;
            ReviewStatus::Pending
        };
        if filter.matches(rec, status) {
            matched.push((rec, annotation));
        }
    }
    let total = snapshot.recordings.len();
    let start = (page - 1).saturating_mul(page_size);
    let count = matched.len();
    let items = matched
        .into_iter()
        .skip(start)
        .take(page_size)
        .map(|(rec, a)| summary(rec, a))
        .collect();
    Ok(Json(RecordingList {
        total,
        pending_count: pending,
        reviewed_count: total - pending,
        matched: count,
        page,
        page_size,
        items,
    }))
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Waveform {
    pub sampling_frequency_hz: Option<f64>,
    pub unit: String,
    pub number_of_measurements: usize,
    pub duration_seconds: Option<f64>,
    /// Missing samples are `null`.
    pub samples: Vec<Option<f64>>,
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct RecordingDetail {
    pub summary: RecordingSummary,
    pub waveform: Waveform,
    /// Newest first.
    pub annotations: Vec<AnnotationView>,
}

pub async fn get_recording(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Json<RecordingDetail>> {
    let snapshot = state.snapshot();
    let rec = snapshot
        .recording(&id)
        .ok_or_else(|| ApiError::not_found("recording"))?;
    let annotations = state.log().for_recording(&rec.raw_id);
    let n = rec.samples.len();
    Ok(Json(RecordingDetail {
        summary: summary(rec, annotations.first().cloned()),
        waveform: Waveform {
            sampling_frequency_hz: rec.sampling_frequency_hz,
            unit: rec.unit.clone(),
            number_of_measurements: n,
            duration_seconds: rec
                .sampling_frequency_hz
                .filter(|f| *f > 0.0)
                .map(|f| n as f64 / f),
            samples: rec.samples.clone(),
        },
        annotations: annotations
            .into_iter()
            .map(|a| AnnotationView::new(a, &rec.masked_id))
            .collect(),
    }))
}

pub async fn post_annotation(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<AnnotationInput>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<AnnotationView>)> {
    let snapshot = state.snapshot();
    let rec = snapshot
        .recording(&id)
        .ok_or_else(|| ApiError::not_found("recording"))?;
    let input = match body {
        Ok(Json(input)) => input,
        Err(JsonRejection::JsonDataError(e)) => {
            return Err(ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                e.body_text(),
            ))
        }
        Err(e) => return Err(ApiError::new(e.status(), e.body_text())),
    };
    let violations = input.violations();
    if !violations.is_empty() {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            violations.join("; "),
        ));
    }
    let record = AnnotationRecord {
        recording_resource_id: rec.raw_id.clone(),
        input,
        annotated_at: Utc::now(),
    };
    let stored = state.log().append(record).map_err(ApiError::internal)?;
    tracing::info!(recording = %rec.masked_id, reviewer = %stored.input.reviewer_initials, "annotation stored");
    Ok((
        StatusCode::CREATED,
        Json(AnnotationView::new(stored, &rec.masked_id)),
    ))
}

fn chart_response(spec: &ChartSpec) -> Response {
    (
        [(header::CONTENT_TYPE, "application/json")],
        spec.to_canonical_json(),
    )
        .into_response()
}

pub async fn ecg_counts(State(state): State<AppState>) -> Response {
    chart_response(state.snapshot().ecg_counts())
}

pub async fn time_in_study(State(state): State<AppState>) -> Response {
    chart_response(state.snapshot().time_in_study())
}

#[derive(Debug, Default, Deserialize)]
pub struct SeriesQuery {
    agg: Option<String>,
    /// Comma-separated masked user ids.
    user: Option<String>,
}

pub async fn series(
    State(state): State<AppState>,
    Path(metric): Path<String>,
    query: Result<Query<SeriesQuery>, QueryRejection>,
) -> ApiResult<Response> {
    let query = query_params(query)?;
    let metric: MetricKind = metric
        .parse()
        .map_err(|e| ApiError::bad_request(format!("{e}")))?;
    let agg: DailyAgg = match query.agg.as_deref() {
        None => DailyAgg::Sum,
        Some(a) => a
            .parse()
            .map_err(|_| ApiError::bad_request(format!("agg must be sum or mean, got {a:?}")))?,
    };
    let users: Option<BTreeSet<String>> = query.user.map(|u| {
        u.split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect()
    });
    match state.snapshot().daily_series(&metric, agg, users.as_ref()) {
        Ok(spec) => Ok(chart_response(&spec)),
        Err(ExploreError::EmptySelection) => Err(ApiError::not_found("series data")),
        Err(e) => Err(ApiError::internal(e)),
    }
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Health {
    pub status: &'static str,
    pub recordings: usize,
    pub annotations: usize,
}

pub async fn health(State(state): State<AppState>) -> Json<Health> {
    Json(Health {
        status: "ok",
        recordings: state.snapshot().recordings.len(),
        annotations: state.log().len(),
    })
}

pub async fn reload(State(state): State<AppState>) -> ApiResult<Json<Health>> {
    let state2 = state.clone();
    tokio::task::spawn_blocking(move || state2.reload())
        .await
        .map_err(ApiError::internal)?
        .map_err(ApiError::internal)?;
    Ok(health(State(state)).await)
}
