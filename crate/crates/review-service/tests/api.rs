mod common;

use std::collections::BTreeSet;

use axum::http::StatusCode;
use serde_json::{json, Value};

use common::{Fixture, RAW_ECGS, RAW_USERS};
use fhirflow::explore::{
    build_daily_series, ecg_counts_per_subject, export_chart_json, time_in_study_weeks_across,
};
use fhirflow::flatten::StudyTables;
use fhirflow::process::{mask_identifiers, DailyAgg};
use fhirflow::{CodeRegistry, FsStore, MetricKind, StoreQuery};

fn svt(initials: &str) -> Value {
    json!({ "reviewerInitials": initials, "diagnosis": "SVT", "quality": "Adequate" })
}

fn items(list: &Value) -> Vec<Value> {
    list["items"].as_array().unwrap().clone()
}

#[tokio::test]
async fn list_counts_and_ordering() {
    let fx = Fixture::new();
    let list = fx.get_json("/api/recordings").await;
    assert_eq!(list["total"], 3);
    assert_eq!(list["pendingCount"], 2);
    assert_eq!(list["reviewedCount"], 1);
    let dates: Vec<String> = items(&list)
        .iter()
        .map(|i| i["date"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(dates, ["2024-03-07", "2024-03-06", "2024-03-05"]);
    let reviewed = &items(&list)[1];
    assert_eq!(reviewed["resourceId"], fx.masked(RAW_ECGS[2]));
    assert_eq!(reviewed["reviewStatus"], "Reviewed");
    assert_eq!(reviewed["latestAnnotation"]["reviewerInitials"], "KR");
    assert_eq!(reviewed["ageGroup"], "Unknown");
    assert_eq!(items(&list)[0]["ageGroup"], "10-13");
    assert_eq!(items(&list)[0]["heartRateBpm"], 131.0);
}

#[tokio::test]
async fn filters_match_a_linear_scan() {
    let fx = Fixture::new();
    let all = items(&fx.get_json("/api/recordings").await);
    let pending = fx.get_json("/api/recordings?status=Pending").await;
    assert_eq!(items(&pending).len(), 2);
    assert_eq!(pending["total"], 3);
    assert_eq!(pending["pendingCount"], 2);
    assert_eq!(
        items(&fx.get_json("/api/recordings?status=Reviewed").await).len(),
        1
    );

    let classes: BTreeSet<String> = all
        .iter()
        .map(|i| i["ecgClassification"].as_str().unwrap().into())
        .collect();
    for class in classes {
        let got = items(
            &fx.get_json(&format!("/api/recordings?classification={class}"))
                .await,
        );
        let want: Vec<&Value> = all
            .iter()
            .filter(|i| i["ecgClassification"] == class.as_str())
            .collect();
        assert_eq!(got.iter().collect::<Vec<_>>(), want, "{class}");
    }
    let user = fx.masked(RAW_USERS[0]);
    let got = items(&fx.get_json(&format!("/api/recordings?user={user}")).await);
    assert_eq!(got.len(), 2);
    let got = items(
        &fx.get_json("/api/recordings?from=2024-03-06&to=2024-03-06")
            .await,
    );
    assert_eq!(got.len(), 1);
    let got = items(
        &fx.get_json("/api/recordings?ageGroup=10%E2%80%9313&status=Pending")
            .await,
    );
    assert_eq!(got.len(), 2);
    let page = fx.get_json("/api/recordings?page=2&pageSize=2").await;
    assert_eq!(page["matched"], 3);
    assert_eq!(items(&page), all[2..].to_vec());
}

#[tokio::test]
async fn malformed_filters_are_400() {
    let fx = Fixture::new();
    for q in [
        "status=Done",
        "from=03/01/2024",
        "from=2024-03-09&to=2024-03-01",
        "ageGroup=20-30",
        "page=0",
        "pageSize=abc",
        "pageSize=100000",
    ] {
        let (status, body) = fx
            .request("GET", &format!("/api/recordings?{q}"), None)
            .await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{q}");
        assert!(serde_json::from_str::<Value>(&body).unwrap()["error"].is_string());
    }
}

#[tokio::test]
async fn detail_serves_the_waveform() {
    let fx = Fixture::new();
    let detail = fx
        .get_json(&format!("/api/recordings/{}", fx.masked(RAW_ECGS[0])))
        .await;
    let wave = &detail["waveform"];
    assert_eq!(wave["samples"].as_array().unwrap().len(), 15_360);
    assert_eq!(wave["numberOfMeasurements"], 15_360);
    assert_eq!(wave["samplingFrequencyHz"], 512.0);
    assert_eq!(wave["durationSeconds"], 30.0);
    assert!(wave["samples"][10].is_null());
    assert!(wave["samples"][11].is_number());
    assert_eq!(detail["summary"]["reviewStatus"], "Pending");
    assert_eq!(detail["annotations"], json!([]));

    let (status, _) = fx.request("GET", "/api/recordings/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = fx
        .request("GET", &format!("/api/recordings/{}", RAW_ECGS[0]), None)
        .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn annotation_flips_status_and_survives_restart() {
    let mut fx = Fixture::new();
    let id = fx.masked(RAW_ECGS[0]);
    let (status, body) = fx
        .post(&format!("/api/recordings/{id}/annotations"), &svt("JD"))
        .await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    let stored: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(stored["recordingResourceId"], id);
    assert_eq!(stored["diagnosis"], "SVT");
    assert!(stored["annotatedAt"].is_string());

    let list = fx.get_json("/api/recordings").await;
    assert_eq!(list["pendingCount"], 1);
    fx.restart();
    let detail = fx.get_json(&format!("/api/recordings/{id}")).await;
    assert_eq!(detail["summary"]["reviewStatus"], "Reviewed");
    assert_eq!(detail["annotations"][0], stored);
    assert_eq!(fx.get_json("/api/recordings").await["pendingCount"], 1);
}

#[tokio::test]
async fn annotations_are_appended_newest_first() {
    let fx = Fixture::new();
    let id = fx.masked(RAW_ECGS[1]);
    let uri = format!("/api/recordings/{id}/annotations");
    assert_eq!(fx.post(&uri, &svt("AB")).await.0, StatusCode::CREATED);
    let other = json!({
        "reviewerInitials": "CDE",
        "diagnosis": "Other",
        "diagnosisOtherText": "Ventricular bigeminy",
        "quality": "Excellent",
        "notes": "second read",
    });
    assert_eq!(fx.post(&uri, &other).await.0, StatusCode::CREATED);
    let detail = fx.get_json(&format!("/api/recordings/{id}")).await;
    let initials: Vec<&str> = detail["annotations"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| a["reviewerInitials"].as_str().unwrap())
        .collect();
    assert_eq!(initials, ["CDE", "AB"]);
    assert_eq!(
        detail["summary"]["latestAnnotation"]["diagnosisOtherText"],
        "Ventricular bigeminy"
    );
    assert_eq!(fx.state.log().len(), 3);
}

#[tokio::test]
async fn invalid_annotations_are_rejected() {
    let fx = Fixture::new();
    let id = fx.masked(RAW_ECGS[0]);
    let uri = format!("/api/recordings/{id}/annotations");
    let cases = [
        (
            json!({ "reviewerInitials": "JD", "diagnosis": "Other", "quality": "Good" }),
            StatusCode::UNPROCESSABLE_ENTITY,
        ),
        (
            json!({ "reviewerInitials": "jd", "diagnosis": "AF", "quality": "Good" }),
            StatusCode::UNPROCESSABLE_ENTITY,
        ),
        (
            json!({ "reviewerInitials": "JD", "diagnosis": "AF", "diagnosisOtherText": "x", "quality": "Good" }),
            StatusCode::UNPROCESSABLE_ENTITY,
        ),
        (
            json!({ "reviewerInitials": "JD", "diagnosis": "Flutter", "quality": "Good" }),
            StatusCode::UNPROCESSABLE_ENTITY,
        ),
        (
            json!({ "reviewerInitials": "JD", "diagnosis": "AF" }),
            StatusCode::UNPROCESSABLE_ENTITY,
        ),
    ];
    for (body, want) in cases {
        let (status, text) = fx.post(&uri, &body).await;
        assert_eq!(status, want, "{body}: {text}");
    }
    let (status, _) = fx.request("POST", &uri, Some("{not json")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = fx
        .post("/api/recordings/unknown/annotations", &svt("JD"))
        .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(fx.state.log().len(), 1);
    assert_eq!(fx.get_json("/api/recordings").await["pendingCount"], 2);
}

#[tokio::test]
async fn concurrent_posts_all_land() {
    let fx = Fixture::new();
    let uri = format!("/api/recordings/{}/annotations", fx.masked(RAW_ECGS[0]));
    let mut tasks = Vec::new();
    for i in 0..16 {
        let app = fx.app.clone();
        let uri = uri.clone();
        tasks.push(tokio::spawn(async move {
            use tower::ServiceExt;
            let initials = format!("A{}", (b'A' + i as u8) as char);
            let req = axum::http::Request::post(uri)
                .header("content-type", "application/json")
                .body(axum::body::Body::from(svt(&initials).to_string()))
                .unwrap();
            app.oneshot(req).await.unwrap().status()
        }));
    }
    for t in tasks {
        assert_eq!(t.await.unwrap(), StatusCode::CREATED);
    }
    assert_eq!(fx.state.log().len(), 17);
    let text = std::fs::read_to_string(fx.state.log().path()).unwrap();
    assert_eq!(text.lines().count(), 17);
}

fn masked_tables(fx: &Fixture) -> StudyTables {
    let store = FsStore::open(fx.dir.path()).unwrap();
    let tables = StudyTables::load(&store, &CodeRegistry::default(), &StoreQuery::all()).unwrap();
    let key = common::key();
    StudyTables {
        observations: mask_identifiers(&tables.observations, &key).unwrap(),
        ecgs: mask_identifiers(&tables.ecgs, &key).unwrap(),
        questionnaires: mask_identifiers(&tables.questionnaires, &key).unwrap(),
        ..tables
    }
}

fn chart_bytes(spec: &fhirflow::explore::ChartSpec) -> String {
    let mut out = Vec::new();
    export_chart_json(spec, &mut out).unwrap();
    String::from_utf8(out).unwrap()
}

#[tokio::test]
async fn stats_equal_the_module_output() {
    let fx = Fixture::new();
    let t = masked_tables(&fx);

    let (_, counts) = ecg_counts_per_subject(&t.ecgs).unwrap();
    let (status, body) = fx.request("GET", "/api/stats/ecg-counts", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, chart_bytes(&counts));
    let v: Value = serde_json::from_str(&body).unwrap();
    let total: f64 = v["series"][0]["points"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["y"].as_f64().unwrap())
        .sum();
    assert_eq!(total as usize, t.ecgs.len());

    let (_, weeks) =
        time_in_study_weeks_across(&[&t.observations, &t.ecgs, &t.questionnaires]).unwrap();
    let (_, body) = fx.request("GET", "/api/stats/time-in-study", None).await;
    assert_eq!(body, chart_bytes(&weeks));

    let steps =
        build_daily_series(&t.observations, &MetricKind::StepCount, DailyAgg::Sum, None).unwrap();
    let (status, body) = fx.request("GET", "/api/series/steps?agg=sum", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, chart_bytes(&steps));

    let user = fx.masked(RAW_USERS[1]);
    let only: BTreeSet<String> = [user.clone()].into();
    let mean = build_daily_series(
        &t.observations,
        &MetricKind::StepCount,
        DailyAgg::Mean,
        Some(&only),
    )
    .unwrap();
    let (_, body) = fx
        .request(
            "GET",
            &format!("/api/series/StepCount?agg=mean&user={user}"),
            None,
        )
        .await;
    assert_eq!(body, chart_bytes(&mean));
}

#[tokio::test]
async fn series_errors() {
    let fx = Fixture::new();
    for (uri, want) in [
        ("/api/series/cadence", StatusCode::BAD_REQUEST),
        ("/api/series/steps?agg=median", StatusCode::BAD_REQUEST),
        ("/api/series/HeartRate", StatusCode::NOT_FOUND),
        ("/api/series/steps?user=nobody", StatusCode::NOT_FOUND),
    ] {
        assert_eq!(fx.request("GET", uri, None).await.0, want, "{uri}");
    }
}

#[tokio::test]
async fn no_raw_identifier_leaves_the_service() {
    let fx = Fixture::new();
    let id = fx.masked(RAW_ECGS[1]);
    let (_, posted) = fx
        .post(&format!("/api/recordings/{id}/annotations"), &svt("JD"))
        .await;
    let mut bodies = vec![posted];
    let mut uris: Vec<String> = [
        "/api/health",
        "/api/recordings",
        "/api/recordings?status=Reviewed",
        "/api/stats/ecg-counts",
        "/api/stats/time-in-study",
        "/api/series/steps",
        "/api/series/steps?agg=mean",
    ]
    .map(String::from)
    .to_vec();
    uris.extend(
        RAW_ECGS
            .iter()
            .map(|r| format!("/api/recordings/{}", fx.masked(r))),
    );
    for uri in &uris {
        let (status, body) = fx.request("GET", uri, None).await;
        assert_eq!(status, StatusCode::OK, "{uri}");
        bodies.push(body);
    }
    let raw: Vec<&str> = RAW_USERS
        .iter()
        .chain(RAW_ECGS.iter())
        .copied()
        .chain(["phq-1", "steps-"])
        .collect();
    for body in &bodies {
        for r in &raw {
            assert!(!body.contains(r), "{r} leaked in {body:.200}");
        }
    }
}

#[tokio::test]
async fn reads_are_idempotent() {
    let fx = Fixture::new();
    for uri in [
        "/api/recordings",
        "/api/stats/ecg-counts",
        "/api/series/steps",
    ] {
        let a = fx.request("GET", uri, None).await;
        let b = fx.request("GET", uri, None).await;
        assert_eq!(a, b, "{uri}");
    }
}

#[tokio::test]
async fn reload_picks_up_new_recordings() {
    let fx = Fixture::new();
    let store = FsStore::open(fx.dir.path()).unwrap();
    let doc = fhirflow::synth::ecg_observation(
        &fhirflow::synth::EcgFixture::new(
            "ecg-rec-004",
            RAW_USERS[1],
            common::at(9, 9),
            "1 2 3 E 5".into(),
        )
        .classification("Inconclusive"),
    )
    .to_string();
    store
        .ingest_documents([("new".to_string(), doc.as_str())])
        .unwrap();
    assert_eq!(fx.get_json("/api/recordings").await["total"], 3);
    let (status, body) = fx.request("POST", "/api/admin/reload", None).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let list = fx.get_json("/api/recordings").await;
    assert_eq!(list["total"], 4);
    assert_eq!(list["pendingCount"], 3);
    assert_eq!(list["items"][0]["ecgClassification"], "Inconclusive");
}

#[tokio::test]
async fn cors_allows_the_dashboard() {
    let fx = Fixture::new();
    let req = axum::http::Request::get("/api/recordings")
        .header("origin", "http://localhost:5173")
        .body(axum::body::Body::empty())
        .unwrap();
    use tower::ServiceExt;
    let resp = fx.app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.headers()["access-control-allow-origin"], "*");
}
