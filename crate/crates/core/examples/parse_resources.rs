//! Parse and validate individual FHIR resources.
//!
//!     cargo run -p fhirflow --example parse_resources

use chrono::{TimeZone, Utc};
use fhirflow::fhir::{decode_sampled_data, parse_resource};
use fhirflow::synth::{self, EcgFixture};
use fhirflow::{CodeRegistry, Resource};

fn main() {
    let registry = CodeRegistry::default();
    let at = Utc.with_ymd_and_hms(2024, 3, 1, 8, 30, 0).unwrap();

    let steps = synth::step_observation("obs-1", "subject-01", at, 1234.0).to_string();
    let env = parse_resource(&steps).expect("valid observation");
    if let Resource::Observation(obs) = &env.resource {
        println!(
            "{} -> {} = {:?} ({})",
            obs.resource_id,
            registry.classify(obs),
            obs.value_quantity.as_ref().map(|q| q.value),
            &env.raw_source_hash[..12]
        );
    }

    let ecg = synth::ecg_observation(
        &EcgFixture::new("ecg-1", "subject-01", at, "12 40 E 380 -20 L 5".into())
            .classification("Sinus Rhythm"),
    );
    let env = parse_resource(&ecg.to_string()).unwrap();
    let obs = env.as_observation().unwrap();
    let wave = decode_sampled_data(obs.sampled_data().unwrap()).unwrap();
    println!(
        "{}: {} samples at {} Hz, missing at {:?}",
        obs.resource_id,
        wave.len(),
        wave.sampling_frequency_hz,
        wave.markers
    );

    for bad in [
        r#"{"resourceType":"Observation","id":"x"}"#,
        r#"{"resourceType":"Encounter","id":"e1"}"#,
        "not json",
    ] {
        match parse_resource(bad) {
            Ok(_) => println!("unexpectedly accepted {bad}"),
            Err(e) => println!("rejected: {e}"),
        }
    }
}
