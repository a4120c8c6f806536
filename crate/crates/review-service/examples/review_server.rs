//! Serve the review API over a generated study store.
//!
//!     cargo run -p fhirflow-review --example review_server
//!     cargo run -p fhirflow-review --example review_server -- --smoke
//!
//! With `FHIRFLOW_STORE_PATH` and `FHIRFLOW_MASK_KEY` set, the configured
//! store is served instead. `--smoke` issues a few requests and exits.

use std::io::{Read, Write};
use std::net::TcpStream;

use fhirflow::process::MaskKey;
use fhirflow::synth::CorpusSpec;
use fhirflow::{FsStore, ResourceStore};
use fhirflow_review::config::STORE_PATH_ENV;
use fhirflow_review::{router, serve, shutdown_signal, AppState, ServiceConfig};
use tokio::net::TcpListener;

fn demo_store(dir: &std::path::Path) -> Result<ServiceConfig, Box<dyn std::error::Error>> {
    CorpusSpec::small()
        .generate()
        .write_to(&dir.join("incoming"))?;
    let store = FsStore::init(dir.join("store"))?;
    let report = store.ingest(&dir.join("incoming"))?;
    println!("generated store with {} resources", report.accepted);
    let key = MaskKey::new(b"demo key, never use in production".to_vec())?;
    let mut config = ServiceConfig::new(dir.join("store"), key);
    config.bind_addr = "127.0.0.1:0".parse()?;
    Ok(config)
}

fn http(
    addr: std::net::SocketAddr,
    method: &str,
    path: &str,
    body: &str,
) -> std::io::Result<String> {
    let mut s = TcpStream::connect(addr)?;
    write!(
        s,
        "{method} {path} HTTP/1.1\r\nHost: {addr}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )?;
    let mut out = String::new();
    s.read_to_string(&mut out)?;
    Ok(out)
}

fn status_and_body(resp: &str) -> (&str, &str) {
    let status = resp.lines().next().unwrap_or_default();
    let body = resp
        .split_once("\r\n\r\n")
        .map(|(_, b)| b)
        .unwrap_or_default();
    (status, body)
}

fn smoke(addr: std::net::SocketAddr) -> Result<(), Box<dyn std::error::Error>> {
    let resp = http(addr, "GET", "/api/recordings?pageSize=3", "")?;
    let (status, body) = status_and_body(&resp);
    println!("GET /api/recordings?pageSize=3 -> {status}");
    let list: serde_json::Value = serde_json::from_str(body)?;
    println!("  total {} pending {}", list["total"], list["pendingCount"]);
    let id = list["items"][0]["resourceId"]
        .as_str()
        .unwrap_or_default()
        .to_string();

    let annotation = r#"{"reviewerInitials":"JD","diagnosis":"NormalSinusRhythm","quality":"Good","notes":"demo"}"#;
    let resp = http(
        addr,
        "POST",
        &format!("/api/recordings/{id}/annotations"),
        annotation,
    )?;
    println!(
        "POST /api/recordings/{id}/annotations -> {}",
        status_and_body(&resp).0
    );

    let resp = http(addr, "GET", &format!("/api/recordings/{id}"), "")?;
    let detail: serde_json::Value = serde_json::from_str(status_and_body(&resp).1)?;
    println!(
        "  {} samples at {} Hz, status {}",
        detail["waveform"]["numberOfMeasurements"],
        detail["waveform"]["samplingFrequencyHz"],
        detail["summary"]["reviewStatus"]
    );

    let resp = http(addr, "GET", "/api/series/step-count?agg=sum", "")?;
    println!(
        "GET /api/series/step-count?agg=sum -> {}",
        status_and_body(&resp).0
    );
    Ok(())
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let smoke_only = std::env::args().any(|a| a == "--smoke");
    let tmp = tempfile::tempdir()?;
    let config = if std::env::var_os(STORE_PATH_ENV).is_some() {
        ServiceConfig::from_env()?
    } else {
        demo_store(tmp.path())?
    };

    let state = AppState::open(&config)?;
    let listener = TcpListener::bind(config.bind_addr).await?;
    let addr = listener.local_addr()?;
    let app = router(state, &config.cors_origins);

    if smoke_only {
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let server = tokio::spawn(serve(listener, app, async {
            let _ = rx.await;
        }));
        tokio::task::spawn_blocking(move || smoke(addr).map_err(|e| e.to_string())).await??;
        let _ = tx.send(());
        server.await??;
        return Ok(());
    }

    println!("listening on http://{addr}/api/recordings (ctrl-c to stop)");
    serve(listener, app, shutdown_signal()).await?;
    Ok(())
}
