#![allow(dead_code)]

use std::path::Path;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use chrono::{DateTime, NaiveDate, TimeZone, Utc};
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

use fhirflow::process::MaskKey;
use fhirflow::synth::{self, EcgFixture, ECG_SAMPLES_30S};
use fhirflow::FsStore;
use fhirflow_review::{AnnotationLog, AnnotationRecord, AppState, ServiceConfig};

pub const KEY_HEX: &str = "00112233445566778899aabbccddeeff";
pub const RAW_USERS: [&str; 2] = ["subject-alpha", "subject-bravo"];
pub const RAW_ECGS: [&str; 3] = ["ecg-rec-001", "ecg-rec-002", "ecg-rec-003"];

pub fn key() -> MaskKey {
    MaskKey::from_hex(KEY_HEX).unwrap()
}

pub fn at(day: u32, hour: u32) -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 3, day, hour, 0, 0).unwrap()
}

/// Three recordings (the first a full 30 s trace), two subjects, a week of
/// steps and one PHQ-9 response. `ecg-rec-003` is annotated up front.
pub fn write_fixture(store_dir: &Path) {
    let store = FsStore::init(store_dir).unwrap();
    let mut docs: Vec<Value> = vec![
        synth::patient(
            RAW_USERS[0],
            NaiveDate::from_ymd_opt(2012, 1, 10),
            Some("female"),
        ),
        synth::patient(RAW_USERS[1], None, None),
        synth::ecg_observation(
            &EcgFixture::new(
                RAW_ECGS[0],
                RAW_USERS[0],
                at(5, 9),
                synth::synthetic_ecg_tokens(ECG_SAMPLES_30S, 72.0, 1, &[10, 20]),
            )
            .heart_rate(72.0)
            .classification("SinusRhythm"),
        ),
        synth::ecg_observation(
            &EcgFixture::new(
                RAW_ECGS[1],
                RAW_USERS[0],
                at(7, 9),
                synth::synthetic_ecg_tokens(512, 130.0, 2, &[]),
            )
            .heart_rate(131.0)
            .classification("HighHeartRate"),
        ),
        synth::ecg_observation(
            &EcgFixture::new(
                RAW_ECGS[2],
                RAW_USERS[1],
                at(6, 9),
                synth::synthetic_ecg_tokens(512, 80.0, 3, &[]),
            )
            .classification("SinusRhythm"),
        ),
        synth::phq9_response(
            "phq-1",
            RAW_USERS[1],
            at(8, 12),
            &[1, 1, 2, 1, 2, 1, 2, 1, 1],
        ),
    ];
    for day in 1..=7 {
        for (u, user) in RAW_USERS.iter().enumerate() {
            for h in [8, 18] {
                let steps = 1000.0 * (u + 1) as f64 + day as f64 * 10.0 + h as f64;
                docs.push(synth::step_observation(
                    &format!("steps-{user}-{day}-{h}"),
                    user,
                    at(day, h),
                    steps,
                ));
            }
        }
    }
    let texts: Vec<String> = docs.iter().map(|d| d.to_string()).collect();
    let report = store
        .ingest_documents(
            texts
                .iter()
                .enumerate()
                .map(|(i, t)| (format!("doc{i}"), t.as_str())),
        )
        .unwrap();
    assert!(report.rejected.is_empty(), "{:?}", report.rejected);

    let config = ServiceConfig::new(store_dir, key());
    let log = AnnotationLog::open(config.annotation_log_path()).unwrap();
    log.append(
        serde_json::from_value::<AnnotationRecord>(serde_json::json!({
            "recordingResourceId": RAW_ECGS[2],
            "reviewerInitials": "KR",
            "diagnosis": "NormalSinusRhythm",
            "quality": "Good",
            "annotatedAt": "2024-03-10T10:00:00Z",
        }))
        .unwrap(),
    )
    .unwrap();
}

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub state: AppState,
    pub app: Router,
}

impl Fixture {
    pub fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path());
        let state = AppState::open(&Self::config_for(dir.path())).unwrap();
        let app = fhirflow_review::router(state.clone(), &[]);
        Self { dir, state, app }
    }

    pub fn config_for(path: &Path) -> ServiceConfig {
        ServiceConfig::new(path, key())
    }

    /// Reopens the service over the same directory, as after a restart.
    pub fn restart(&mut self) {
        let state = AppState::open(&Self::config_for(self.dir.path())).unwrap();
        self.app = fhirflow_review::router(state.clone(), &[]);
        self.state = state;
    }

    pub async fn request(
        &self,
        method: &str,
        uri: &str,
        body: Option<&str>,
    ) -> (StatusCode, String) {
        let mut req = Request::builder().method(method).uri(uri);
        if body.is_some() {
            req = req.header("content-type", "application/json");
        }
        let req = req
            .body(Body::from(body.unwrap_or_default().to_string()))
            .unwrap();
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        (status, String::from_utf8(bytes.to_vec()).unwrap())
    }

    pub async fn get_json(&self, uri: &str) -> Value {
        let (status, body) = self.request("GET", uri, None).await;
        assert_eq!(status, StatusCode::OK, "{uri}: {body}");
        serde_json::from_str(&body).unwrap()
    }

    pub async fn post(&self, uri: &str, body: &Value) -> (StatusCode, String) {
        self.request("POST", uri, Some(&body.to_string())).await
    }

    /// Masked id of the recording with this raw id.
    pub fn masked(&self, raw: &str) -> String {
        fhirflow::process::pseudonym(&key(), raw)
    }
}
