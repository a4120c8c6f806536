//! Study overview charts: daily series, heart-rate distribution, recordings
//! per subject and time in study, as SVG and chart JSON.
//!
//!     cargo run -p fhirflow --example study_dashboard_charts [out-dir]

use std::path::PathBuf;

use fhirflow::explore::{
    build_daily_series, build_distribution, ecg_counts_per_subject, export_chart_json_file,
    render_chart_svg, time_in_study_weeks_across, ChartSpec, StudySummary,
};
use fhirflow::fhir::parse_value;
use fhirflow::flatten::StudyTables;
use fhirflow::process::DailyAgg;
use fhirflow::synth::CorpusSpec;
use fhirflow::{CodeRegistry, MetricKind};

fn save(
    out: &std::path::Path,
    name: &str,
    spec: &ChartSpec,
) -> Result<(), Box<dyn std::error::Error>> {
    std::fs::write(out.join(format!("{name}.svg")), render_chart_svg(spec)?)?;
    export_chart_json_file(spec, out.join(format!("{name}.json")))?;
    println!(
        "{name:<16} {:>5} points  {}",
        spec.point_count(),
        spec.title
    );
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(std::env::temp_dir);
    let mut spec = CorpusSpec::study();
    spec.ecg_samples = 1024;
    let envelopes = spec
        .generate()
        .all()
        .map(parse_value)
        .collect::<Result<Vec<_>, _>>()?;
    let t = StudyTables::from_envelopes(&envelopes, &CodeRegistry::default())?;

    save(
        &out,
        "daily_steps",
        &build_daily_series(&t.observations, &MetricKind::StepCount, DailyAgg::Sum, None)?,
    )?;
    save(
        &out,
        "daily_energy",
        &build_daily_series(
            &t.observations,
            &MetricKind::ActiveEnergy,
            DailyAgg::Sum,
            None,
        )?,
    )?;
    save(
        &out,
        "daily_vo2max",
        &build_daily_series(&t.observations, &MetricKind::Vo2Max, DailyAgg::Mean, None)?,
    )?;
    save(
        &out,
        "heart_rate",
        &build_distribution(&t.observations, &MetricKind::HeartRate)?,
    )?;
    let (counts, counts_chart) = ecg_counts_per_subject(&t.ecgs)?;
    save(&out, "ecg_counts", &counts_chart)?;
    let (weeks, weeks_chart) =
        time_in_study_weeks_across(&[&t.observations, &t.ecgs, &t.questionnaires])?;
    save(&out, "time_in_study", &weeks_chart)?;

    for s in StudySummary::join(&counts, &weeks).per_subject {
        println!(
            "{}  {:>2} ECGs  {:>5.2} weeks",
            s.user_id, s.ecg_count, s.weeks_in_study
        );
    }
    println!("written to {}", out.display());
    Ok(())
}
