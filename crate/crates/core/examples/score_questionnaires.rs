//! PHQ-9 scoring, custom severity bands and registering another instrument.
//!
//!     cargo run -p fhirflow --example score_questionnaires

use std::sync::Arc;

use chrono::{TimeZone, Utc};
use fhirflow::fhir::parse_value;
use fhirflow::flatten::StudyTables;
use fhirflow::process::{
    score_phq9, Phq9Scorer, RiskScoreRow, ScoreError, ScoreRegistry, SeverityBand, SeverityBands,
};
use fhirflow::synth;
use fhirflow::CodeRegistry;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let at = Utc.with_ymd_and_hms(2024, 2, 1, 20, 0, 0).unwrap();
    let docs = [
        synth::phq9_response("qr-1", "subject-01", at, &[0; 9]),
        synth::phq9_response("qr-2", "subject-02", at, &[1, 1, 2, 1, 2, 1, 2, 1, 1]),
        synth::phq9_response("qr-3", "subject-03", at, &[3; 9]),
        synth::phq9_response("qr-4", "subject-04", at, &[2; 7]),
    ];
    let envelopes = docs
        .iter()
        .map(parse_value)
        .collect::<Result<Vec<_>, _>>()?;
    let table = StudyTables::from_envelopes(&envelopes, &CodeRegistry::default())?.questionnaires;

    let report = score_phq9(&table)?;
    for s in &report.scores {
        println!(
            "{} {} -> {} ({})",
            s.user_id, s.resource_id, s.total_score, s.severity_band
        );
    }
    for r in &report.rejected {
        println!(
            "{} rejected: {}",
            r.resource_id,
            serde_json::to_string(&r.error)?
        );
    }

    // Two coarse bands instead of the standard five.
    let band = |min, max, label: &str| SeverityBand {
        min,
        max,
        label: label.into(),
    };
    let coarse = SeverityBands::new(vec![band(0, 9, "below threshold"), band(10, 27, "refer")])?;
    let scorer = Phq9Scorer::standard().with_bands(coarse)?;
    let mut registry = ScoreRegistry::empty();
    registry.register("phq9", Arc::new(move |g| scorer.score(g)))?;
    // A toy instrument: counts answered items.
    registry.register(
        "item-count",
        Arc::new(|g| -> Result<RiskScoreRow, ScoreError> {
            Ok(RiskScoreRow {
                user_id: g.user_id.clone(),
                resource_id: g.resource_id.clone(),
                authored_date: g.authored_date,
                instrument: "item-count".into(),
                total_score: g.rows.len() as i64,
                severity_band: String::new(),
            })
        }),
    )?;
    println!(
        "registered: {:?}",
        registry.instruments().collect::<Vec<_>>()
    );
    for s in registry.score(&table)?.scores {
        println!(
            "coarse: {} -> {} ({})",
            s.resource_id, s.total_score, s.severity_band
        );
    }
    for s in registry.score_instrument("item-count", &table)?.scores {
        println!("items answered: {} -> {}", s.resource_id, s.total_score);
    }
    Ok(())
}
