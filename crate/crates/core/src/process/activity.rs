use std::collections::BTreeMap;

use chrono::{Days, NaiveDate};

use super::aggregate::{aggregate, DailyAgg};
use super::ProcessError;
use crate::fhir::MetricKind;
use crate::flatten::{FlatTable, ObservationRow, SchemaKind};
use crate::time::{format_date, midnight};

pub const ACTIVITY_INDEX_NAME: &str = "Activity Index";
pub const ACTIVITY_WINDOW_DAYS: u64 = 7;

/// Trailing 7-day mean of daily step totals, per user.
///
/// Daily totals are computed first. For every day `d` with data the index
/// is the mean of the totals on days `d-6..=d` present in the data, so
/// early or gappy windows average fewer days. Those rows are listed in the
/// `partialWindows` provenance entry; `windowDays` records how many days
/// each row averaged. Rows of other metrics are ignored.
pub fn activity_index(table: &FlatTable) -> Result<FlatTable, ProcessError> {
    table.expect_schema(SchemaKind::ObservationFlat)?;
    let steps_label = MetricKind::StepCount.label();
    let steps = table.filter_rows(|r| r[2].as_text() == Some(steps_label));
    let daily: Vec<ObservationRow> = aggregate(&steps, DailyAgg::Sum)?.typed_rows()?;

    let mut by_user: BTreeMap<&str, BTreeMap<NaiveDate, &ObservationRow>> = BTreeMap::new();
    for r in &daily {
        by_user
            .entry(&r.user_id)
            .or_default()
            .insert(r.effective_date.date_naive(), r);
    }

    let mut out = Vec::new();
    let mut partial = Vec::new();
    let mut window_days = BTreeMap::new();
    for (user, days) in &by_user {
        for (&day, row) in days {
            let start = day - Days::new(ACTIVITY_WINDOW_DAYS - 1);
            let window: Vec<f64> = days.range(start..=day).map(|(_, r)| r.value).collect();
            let resource_id = format!("activity-index/{user}/{}", format_date(&day));
            if (window.len() as u64) < ACTIVITY_WINDOW_DAYS {
                partial.push(resource_id.clone());
            }
            window_days.insert(resource_id.clone(), window.len());
            out.push(ObservationRow {
                user_id: user.to_string(),
                resource_id,
                quantity_name: ACTIVITY_INDEX_NAME.into(),
                unit: row.unit.clone(),
                value: window.iter().sum::<f64>() / window.len() as f64,
                loinc_code: row.loinc_code.clone(),
                display_name: ACTIVITY_INDEX_NAME.into(),
                device_code: row.device_code.clone(),
                effective_date: midnight(day),
            });
        }
    }

    let mut table = FlatTable::from_rows(out)?;
    table.set_provenance("aggregation", "activity-index");
    table.set_provenance(
        "partialWindows",
        serde_json::to_string(&partial).expect("id list serializes"),
    );
    table.set_provenance(
        "windowDays",
        serde_json::to_string(&window_days).expect("count map serializes"),
    );
    Ok(table)
}
