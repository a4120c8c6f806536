use std::collections::BTreeMap;

use chrono::NaiveDate;

use super::ProcessError;
use crate::fhir::MetricKind;
use crate::flatten::{FlatTable, ObservationRow, SchemaKind};
use crate::time::{format_date, midnight};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DailyAgg {
    Sum,
    Mean,
}

impl DailyAgg {
    pub fn as_str(self) -> &'static str {
        match self {
            DailyAgg::Sum => "sum",
            DailyAgg::Mean => "mean",
        }
    }
}

impl std::str::FromStr for DailyAgg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sum" | "total" => Ok(DailyAgg::Sum),
            "mean" | "avg" | "average" => Ok(DailyAgg::Mean),
            _ => Err(format!("unknown aggregation {s:?}; expected sum or mean")),
        }
    }
}

/// One row per (userId, quantityName, UTC date) holding the total of that
/// day's values. Output is sorted by that key.
pub fn aggregate_daily_sum(table: &FlatTable) -> Result<FlatTable, ProcessError> {
    aggregate(table, DailyAgg::Sum)
}

/// Like [`aggregate_daily_sum`] but holding the arithmetic mean. The number
/// of contributing rows per output row is stored in provenance as `rowCounts`.
pub fn aggregate_daily_mean(table: &FlatTable) -> Result<FlatTable, ProcessError> {
    aggregate(table, DailyAgg::Mean)
}

/// Value shared by every row of a group, or empty when they disagree.
fn uniform(values: impl IntoIterator<Item = String>) -> String {
    let mut it = values.into_iter();
    let first = it.next().unwrap_or_default();
    if it.all(|v| v == first) {
        first
    } else {
        String::new()
    }
}

pub(crate) fn daily_groups(
    rows: Vec<ObservationRow>,
) -> BTreeMap<(String, String, NaiveDate), Vec<ObservationRow>> {
    let mut groups: BTreeMap<_, Vec<ObservationRow>> = BTreeMap::new();
    for r in rows {
        let key = (
            r.user_id.clone(),
            r.quantity_name.clone(),
            r.effective_date.date_naive(),
        );
        groups.entry(key).or_default().push(r);
    }
    groups
}

pub(crate) fn aggregate(table: &FlatTable, agg: DailyAgg) -> Result<FlatTable, ProcessError> {
    table.expect_schema(SchemaKind::ObservationFlat)?;
    let groups = daily_groups(table.typed_rows()?);

    let mut out = Vec::with_capacity(groups.len());
    let mut counts = BTreeMap::new();
    for ((user, name, date), members) in groups {
        let total: f64 = members.iter().map(|r| r.value).sum();
        let value = match agg {
            DailyAgg::Sum => total,
            DailyAgg::Mean => total / members.len() as f64,
        };
        let resource_id = format!(
            "daily-{}/{}/{}/{}",
            agg.as_str(),
            user,
            MetricKind::from_label(&name).id(),
            format_date(&date)
        );
        counts.insert(resource_id.clone(), members.len());
        out.push(ObservationRow {
            user_id: user,
            resource_id,
            quantity_name: name,
            unit: uniform(members.iter().map(|r| r.unit.clone())),
            value,
            loinc_code: uniform(members.iter().map(|r| r.loinc_code.clone())),
            display_name: uniform(members.iter().map(|r| r.display_name.clone())),
            device_code: uniform(members.iter().map(|r| r.device_code.clone())),
            effective_date: midnight(date),
        });
    }
    let mut table = FlatTable::from_rows(out)?;
    table.set_provenance("aggregation", format!("daily-{}", agg.as_str()));
    table.set_provenance(
        "rowCounts",
        serde_json::to_string(&counts).expect("count map serializes"),
    );
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{DateTime, TimeZone, Utc};
    use proptest::prelude::*;
    use std::collections::HashMap;

    fn obs(
        user: &str,
        id: usize,
        metric: MetricKind,
        at: DateTime<Utc>,
        value: f64,
    ) -> ObservationRow {
        ObservationRow {
            user_id: user.into(),
            resource_id: format!("obs-{id}"),
            quantity_name: metric.label().into(),
            unit: if metric == MetricKind::StepCount {
                "steps"
            } else {
                "beats/minute"
            }
            .into(),
            value,
            loinc_code: if metric == MetricKind::StepCount {
                "55423-8"
            } else {
                "8867-4"
            }
            .into(),
            display_name: String::new(),
            device_code: "watch".into(),
            effective_date: at,
        }
    }

    fn at(day: u32, hour: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 1, day, hour, 30, 0).unwrap()
    }

    fn vals(t: &FlatTable) -> Vec<f64> {
        t.rows()
            .iter()
            .map(|r| r[4].as_decimal().unwrap())
            .collect()
    }

    #[test]
    fn same_day_sum() {
        let t = FlatTable::from_rows([
            obs("A", 1, MetricKind::StepCount, at(1, 8), 100.0),
            obs("A", 2, MetricKind::StepCount, at(1, 18), 200.0),
        ])
        .unwrap();
        let s = aggregate_daily_sum(&t).unwrap();
        assert_eq!(vals(&s), [300.0]);
        let r: Vec<ObservationRow> = s.typed_rows().unwrap();
        assert_eq!(r[0].resource_id, "daily-sum/A/StepCount/2024-01-01");
        assert_eq!(
            r[0].effective_date,
            Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap()
        );
        assert_eq!(r[0].unit, "steps");
        assert_eq!(r[0].device_code, "watch");
    }

    #[test]
    fn separate_days_and_metrics() {
        let t = FlatTable::from_rows([
            obs("A", 1, MetricKind::StepCount, at(1, 8), 100.0),
            obs("A", 2, MetricKind::StepCount, at(2, 8), 200.0),
            obs("A", 3, MetricKind::HeartRate, at(1, 9), 60.0),
            obs("A", 4, MetricKind::HeartRate, at(1, 10), 80.0),
        ])
        .unwrap();
        let s = aggregate_daily_sum(&t).unwrap();
        assert_eq!(s.len(), 3);
        let m = aggregate_daily_mean(&t).unwrap();
        let rows: Vec<ObservationRow> = m.typed_rows().unwrap();
        let hr: Vec<_> = rows
            .iter()
            .filter(|r| r.quantity_name == "Heart Rate")
            .collect();
        assert_eq!(hr.len(), 1);
        assert_eq!(hr[0].value, 70.0);
        let counts: HashMap<String, usize> =
            serde_json::from_str(&m.provenance()["rowCounts"]).unwrap();
        assert_eq!(counts[&hr[0].resource_id], 2);
    }

    #[test]
    fn single_row_mean_is_identity() {
        let t = FlatTable::from_rows([obs("A", 1, MetricKind::HeartRate, at(3, 3), 61.5)]).unwrap();
        assert_eq!(vals(&aggregate_daily_mean(&t).unwrap()), [61.5]);
    }

    #[test]
    fn disagreeing_metadata_is_blanked() {
        let mut b = obs("A", 2, MetricKind::StepCount, at(1, 9), 1.0);
        b.device_code = "phone".into();
        let t =
            FlatTable::from_rows([obs("A", 1, MetricKind::StepCount, at(1, 8), 1.0), b]).unwrap();
        let r: Vec<ObservationRow> = aggregate_daily_sum(&t).unwrap().typed_rows().unwrap();
        assert_eq!(r[0].device_code, "");
        assert_eq!(r[0].unit, "steps");
    }

    #[test]
    fn empty_and_wrong_schema() {
        let t = FlatTable::new(SchemaKind::ObservationFlat);
        assert!(aggregate_daily_sum(&t).unwrap().is_empty());
        assert!(aggregate_daily_sum(&FlatTable::new(SchemaKind::EcgFlat)).is_err());
    }

    fn arb_rows() -> impl Strategy<Value = Vec<ObservationRow>> {
        proptest::collection::vec(
            (0usize..3, any::<bool>(), 1u32..6, 0u32..24, 0.0f64..5000.0),
            0..50,
        )
        .prop_map(|spec| {
            spec.into_iter()
                .enumerate()
                .map(|(i, (u, steps, d, h, v))| {
                    let m = if steps {
                        MetricKind::StepCount
                    } else {
                        MetricKind::HeartRate
                    };
                    obs(["A", "B", "C"][u], i, m, at(d, h), v)
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn sum_conserves_mass(rows in arb_rows()) {
            let t = FlatTable::from_rows(rows.clone()).unwrap();
            let s = aggregate_daily_sum(&t).unwrap();
            let mut before: HashMap<(String, String), f64> = HashMap::new();
            for r in &rows {
                *before.entry((r.user_id.clone(), r.quantity_name.clone())).or_default() += r.value;
            }
            let mut after: HashMap<(String, String), f64> = HashMap::new();
            for r in s.typed_rows::<ObservationRow>().unwrap() {
                *after.entry((r.user_id, r.quantity_name)).or_default() += r.value;
            }
            prop_assert_eq!(before.len(), after.len());
            for (k, v) in before {
                prop_assert!((after[&k] - v).abs() <= 1e-9 * v.abs().max(1.0));
            }
        }

        #[test]
        fn mean_times_count_is_sum(rows in arb_rows()) {
            let t = FlatTable::from_rows(rows).unwrap();
            let s: Vec<ObservationRow> = aggregate_daily_sum(&t).unwrap().typed_rows().unwrap();
            let m_table = aggregate_daily_mean(&t).unwrap();
            let counts: HashMap<String, usize> =
                serde_json::from_str(&m_table.provenance()["rowCounts"]).unwrap();
            let m: Vec<ObservationRow> = m_table.typed_rows().unwrap();
            prop_assert_eq!(s.len(), m.len());
            for (a, b) in s.iter().zip(&m) {
                let n = counts[&b.resource_id] as f64;
                prop_assert!((b.value * n - a.value).abs() <= 1e-9 * a.value.abs().max(1.0));
            }
        }
    }
}
