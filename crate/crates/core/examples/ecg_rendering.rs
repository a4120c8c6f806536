//! Decode a 30 s wearable ECG and render the full trace and a 3 s window.
//!
//!     cargo run -p fhirflow --example ecg_rendering [out-dir]

use std::path::PathBuf;

use chrono::{TimeZone, Utc};
use fhirflow::explore::{build_ecg_trace, export_chart_json_file, render_chart_svg};
use fhirflow::fhir::parse_value;
use fhirflow::flatten::{flatten_ecg, EcgRow};
use fhirflow::synth::{self, EcgFixture, ECG_SAMPLES_30S};
use fhirflow::CodeRegistry;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(std::env::temp_dir);
    let at = Utc.with_ymd_and_hms(2024, 3, 4, 11, 0, 0).unwrap();
    let tokens = synth::synthetic_ecg_tokens(ECG_SAMPLES_30S, 84.0, 42, &[1500, 1501, 1502]);
    let doc = synth::ecg_observation(
        &EcgFixture::new("ecg-demo", "subject-01", at, tokens)
            .heart_rate(84.0)
            .classification("Sinus Rhythm"),
    );
    let env = parse_value(&doc)?;
    let table = flatten_ecg([env.as_observation().unwrap()], &CodeRegistry::default())?;
    let row: EcgRow = table.typed_rows()?.remove(0);
    let fs = row.sampling_frequency_hz.unwrap_or_default();
    println!(
        "{}: {} samples at {fs} Hz = {:.1} s, classification {:?}, {} missing",
        row.resource_id,
        row.number_of_measurements,
        row.number_of_measurements as f64 / fs,
        row.ecg_classification,
        row.ecg_recording
            .as_ref()
            .map_or(0, |w| w.iter().filter(|s| s.is_none()).count())
    );

    let full = build_ecg_trace(&row, None)?;
    std::fs::write(out.join("ecg_full.svg"), render_chart_svg(&full)?)?;
    let window = build_ecg_trace(&row, Some((2.0, 5.0)))?;
    std::fs::write(out.join("ecg_window.svg"), render_chart_svg(&window)?)?;
    export_chart_json_file(&window, out.join("ecg_window.json"))?;
    println!(
        "window points: {}, wrote ecg_full.svg, ecg_window.svg/.json to {}",
        window.point_count(),
        out.display()
    );
    Ok(())
}
