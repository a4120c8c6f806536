#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use chrono::{DateTime, TimeZone, Utc};
use serde_json::Value;

pub const KEY_HEX: &str = "000102030405060708090a0b0c0d0e0f";

pub fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_fhirflow"))
}

/// Runs the binary against `store` with a fixed mask key.
pub fn run(store: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .arg("--store")
        .arg(store)
        .args(args)
        .env("FHIRFLOW_MASK_KEY", KEY_HEX)
        .env_remove("FHIRFLOW_STORE_PATH")
        .env_remove("FHIRFLOW_REGISTRY_PATH")
        .output()
        .expect("binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[track_caller]
pub fn ok(out: Output) -> Output {
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    out
}

pub fn at(day: u32, hour: u32) -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 2, day, hour, 0, 0).unwrap()
}

pub fn write_ndjson(path: &Path, docs: &[Value]) {
    let text: String = docs.iter().map(|d| format!("{d}\n")).collect();
    std::fs::write(path, text).unwrap();
}

/// Fresh store under `dir/store` loaded from `docs`.
pub fn store_with(dir: &Path, docs: &[Value]) -> PathBuf {
    let store = dir.join("store");
    ok(run(&store, &["init"]));
    let src = dir.join("input.ndjson");
    write_ndjson(&src, docs);
    ok(run(&store, &["ingest", src.to_str().unwrap()]));
    store
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Data rows of a CSV written by the tool (comment lines and header skipped).
pub fn data_lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(String::from)
        .collect()
}
