//! Outlier filtering, selection, daily aggregation, the activity index and
//! masking on an observation table.
//!
//!     cargo run -p fhirflow --example process_pipeline

use chrono::NaiveDate;
use fhirflow::fhir::parse_value;
use fhirflow::flatten::{ObservationRow, StudyTables};
use fhirflow::process::{
    activity_index, aggregate_daily_mean, aggregate_daily_sum, filter_outliers, mask_identifiers,
    select_date_range, select_users, MaskKey, OutlierPolicy,
};
use fhirflow::synth::CorpusSpec;
use fhirflow::{CodeRegistry, MetricKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut spec = CorpusSpec::small();
    spec.days = 14;
    let envelopes = spec
        .generate()
        .all()
        .map(parse_value)
        .collect::<Result<Vec<_>, _>>()?;
    let obs = StudyTables::from_envelopes(&envelopes, &CodeRegistry::default())?.observations;
    println!("observations: {}", obs.len());

    let (kept, removed) = filter_outliers(&obs, &OutlierPolicy::default())?;
    let (_, iqr_removed) = filter_outliers(&obs, &OutlierPolicy::iqr(1.5))?;
    println!("fixed-range filter removed {removed}, IQR x1.5 would remove {iqr_removed}");

    let week = select_date_range(
        &select_users(&kept, ["subject-01"]),
        NaiveDate::from_ymd_opt(2024, 1, 1).unwrap(),
        NaiveDate::from_ymd_opt(2024, 1, 7).unwrap(),
    )?;
    println!("subject-01, first week: {} rows", week.len());

    let sums = aggregate_daily_sum(&week)?;
    let means = aggregate_daily_mean(&week)?;
    for (s, m) in sums
        .typed_rows::<ObservationRow>()?
        .iter()
        .zip(means.typed_rows::<ObservationRow>()?)
    {
        println!(
            "  {} {:<12} sum {:>8.1}  mean {:>7.1}",
            s.effective_date.date_naive(),
            s.quantity_name,
            s.value,
            m.value
        );
    }

    let steps = kept.filter_rows(|r| r[2].as_text() == Some(MetricKind::StepCount.label()));
    let index = activity_index(&steps)?;
    println!(
        "activity index rows: {}, partial windows: {}",
        index.len(),
        index.provenance()["partialWindows"]
    );
    for r in index.typed_rows::<ObservationRow>()?.iter().take(8) {
        println!(
            "  {} {} {:.1}",
            r.user_id,
            r.effective_date.date_naive(),
            r.value
        );
    }

    let key = MaskKey::new(b"example key, never use in production".to_vec())?;
    let masked = mask_identifiers(&index, &key)?;
    println!(
        "masked ids: {:?}",
        masked.user_ids().into_iter().collect::<Vec<_>>()
    );
    Ok(())
}
