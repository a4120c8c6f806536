//! Load a generated corpus into a filesystem store and run partial queries.
//!
//!     cargo run -p fhirflow --example ingest_and_query

use chrono::{TimeZone, Utc};
use fhirflow::synth::CorpusSpec;
use fhirflow::{FsStore, MetricKind, ResourceKind, ResourceStore, StoreQuery};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let corpus = CorpusSpec::small().generate();
    corpus.write_to(&dir.path().join("incoming"))?;

    let store = FsStore::init(dir.path().join("store"))?;
    let report = store.ingest(&dir.path().join("incoming"))?;
    println!(
        "first ingest: {} accepted, {} duplicates",
        report.accepted, report.duplicates
    );
    let again = store.ingest(&dir.path().join("incoming"))?;
    println!(
        "second ingest: {} accepted, {} duplicates",
        again.accepted, again.duplicates
    );

    let q = StoreQuery::kinds([ResourceKind::Observation])
        .with_subjects(["subject-02"])
        .with_metrics([MetricKind::StepCount])
        .between(
            Some(Utc.with_ymd_and_hms(2024, 1, 3, 0, 0, 0).unwrap()),
            Some(Utc.with_ymd_and_hms(2024, 1, 5, 23, 59, 59).unwrap()),
        );
    for env in store.query(&q)? {
        let obs = env.as_observation().unwrap();
        println!(
            "  {} {} {:?}",
            obs.resource_id,
            obs.effective_start,
            obs.value_quantity.as_ref().map(|v| v.value)
        );
    }

    for user in store.list_users()? {
        println!(
            "user {} born {:?} {:?}",
            user.subject_id, user.birth_date, user.demographics
        );
    }
    println!("reindexed {} resources", store.reindex()?);
    Ok(())
}
