//! Immutable, already-masked view of the store that requests read from.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, Utc};
use serde::Serialize;

use fhirflow::explore::{
    build_daily_series, ecg_counts_per_subject, time_in_study_weeks_across, ChartSpec,
};
use fhirflow::flatten::{EcgRow, StudyTables};
use fhirflow::process::{mask_identifiers, DailyAgg, MaskKey};
use fhirflow::{CodeRegistry, FlatTable, MetricKind, ResourceStore, StoreQuery};

use crate::ServiceError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum AgeGroup {
    #[serde(rename = "6-9")]
    SixToNine,
    #[serde(rename = "10-13")]
    TenToThirteen,
    #[serde(rename = "14-18")]
    FourteenToEighteen,
    Unknown,
}

impl AgeGroup {
    /// Bucket of the age in whole years on `on`. Ages outside 6 to 18 and
    /// missing birth dates are `Unknown`.
    pub fn at(birth_date: Option<NaiveDate>, on: NaiveDate) -> Self {
        let Some(age) = birth_date.and_then(|b| on.years_since(b)) else {
            return AgeGroup::Unknown;
        };
        match age {
            6..=9 => AgeGroup::SixToNine,
            10..=13 => AgeGroup::TenToThirteen,
            14..=18 => AgeGroup::FourteenToEighteen,
            _ => AgeGroup::Unknown,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AgeGroup::SixToNine => "6-9",
            AgeGroup::TenToThirteen => "10-13",
            AgeGroup::FourteenToEighteen => "14-18",
            AgeGroup::Unknown => "Unknown",
        }
    }
}

impl fmt::Display for AgeGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AgeGroup {
    type Err = String;

    /// Accepts a hyphen or an en dash between the bounds.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().replace('\u{2013}', "-").as_str() {
            "6-9" => Ok(AgeGroup::SixToNine),
            "10-13" => Ok(AgeGroup::TenToThirteen),
            "14-18" => Ok(AgeGroup::FourteenToEighteen),
            "Unknown" | "unknown" => Ok(AgeGroup::Unknown),
            _ => Err(format!(
                "unknown ageGroup {s:?}; expected 6-9, 10-13, 14-18 or Unknown"
            )),
        }
    }
}

/// One ECG recording as the API exposes it, plus the raw id used to key
/// annotations.
#[derive(Debug, Clone)]
pub struct Recording {
    pub(crate) raw_id: String,
    pub masked_id: String,
    pub masked_user: String,
    pub effective: DateTime<Utc>,
    pub classification: String,
    pub heart_rate_bpm: Option<f64>,
    pub age_group: AgeGroup,
    pub unit: String,
    pub sampling_frequency_hz: Option<f64>,
    pub samples: Vec<Option<f64>>,
}

impl Recording {
    pub fn date(&self) -> NaiveDate {
        self.effective.date_naive()
    }
}

#[derive(Debug)]
pub struct Snapshot {
    /// Date descending, then masked id.
    pub recordings: Vec<Recording>,
    by_masked_id: HashMap<String, usize>,
    observations: FlatTable,
    ecg_counts: ChartSpec,
    time_in_study: ChartSpec,
}

impl Snapshot {
    pub fn build(
        store: &dyn ResourceStore,
        registry: &CodeRegistry,
        key: &MaskKey,
    ) -> Result<Self, ServiceError> {
        let tables = StudyTables::load(store, registry, &StoreQuery::all())?;
        Self::from_tables(&tables, key)
    }

    pub fn from_tables(tables: &StudyTables, key: &MaskKey) -> Result<Self, ServiceError> {
        let birth_dates: HashMap<String, NaiveDate> = tables
            .users
            .rows()
            .iter()
            .filter_map(|r| Some((r[0].as_text()?.to_string(), r[1].as_date()?)))
            .collect();

        let masked_ecgs = mask_identifiers(&tables.ecgs, key)?;
        let raw: Vec<EcgRow> = tables.ecgs.typed_rows()?;
        let masked: Vec<EcgRow> = masked_ecgs.typed_rows()?;
        let mut recordings: Vec<Recording> = raw
            .into_iter()
            .zip(masked)
            .map(|(raw, masked)| Recording {
                age_group: AgeGroup::at(
                    birth_dates.get(&raw.user_id).copied(),
                    raw.effective_date.date_naive(),
                ),
                raw_id: raw.resource_id,
                masked_id: masked.resource_id,
                masked_user: masked.user_id,
                effective: masked.effective_date,
                classification: masked.ecg_classification,
                heart_rate_bpm: masked.heart_rate_bpm,
                unit: masked.unit,
                sampling_frequency_hz: masked.sampling_frequency_hz,
                samples: masked.ecg_recording.unwrap_or_default(),
            })
            .collect();
        recordings.sort_by(|a, b| {
            b.effective
                .date_naive()
                .cmp(&a.effective.date_naive())
                .then_with(|| b.effective.cmp(&a.effective))
                .then_with(|| a.masked_id.cmp(&b.masked_id))
        });
        let by_masked_id = recordings
            .iter()
            .enumerate()
            .map(|(i, r)| (r.masked_id.clone(), i))
            .collect();

        let observations = mask_identifiers(&tables.observations, key)?;
        let questionnaires = mask_identifiers(&tables.questionnaires, key)?;
        let (_, ecg_counts) = ecg_counts_per_subject(&masked_ecgs)?;
        let (_, time_in_study) =
            time_in_study_weeks_across(&[&observations, &masked_ecgs, &questionnaires])?;
        Ok(Self {
            recordings,
            by_masked_id,
            observations,
            ecg_counts,
            time_in_study,
        })
    }

    pub fn recording(&self, masked_id: &str) -> Option<&Recording> {
        self.by_masked_id
            .get(masked_id)
            .map(|&i| &self.recordings[i])
    }

    pub fn ecg_counts(&self) -> &ChartSpec {
        &self.ecg_counts
    }

    pub fn time_in_study(&self) -> &ChartSpec {
        &self.time_in_study
    }

    /// Masked observation table the series charts are drawn from.
    pub fn observations(&self) -> &FlatTable {
        &self.observations
    }

    pub fn daily_series(
        &self,
        metric: &MetricKind,
        agg: DailyAgg,
        users: Option<&BTreeSet<String>>,
    ) -> Result<ChartSpec, fhirflow::explore::ExploreError> {
        build_daily_series(&self.observations, metric, agg, users)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    #[test]
    fn age_buckets() {
        let on = d(2024, 6, 15);
        assert_eq!(AgeGroup::at(None, on), AgeGroup::Unknown);
        assert_eq!(AgeGroup::at(Some(d(2018, 6, 15)), on), AgeGroup::SixToNine);
        assert_eq!(AgeGroup::at(Some(d(2018, 6, 16)), on), AgeGroup::Unknown);
        assert_eq!(AgeGroup::at(Some(d(2014, 6, 16)), on), AgeGroup::SixToNine);
        assert_eq!(
            AgeGroup::at(Some(d(2014, 6, 15)), on),
            AgeGroup::TenToThirteen
        );
        assert_eq!(
            AgeGroup::at(Some(d(2010, 6, 15)), on),
            AgeGroup::FourteenToEighteen
        );
        assert_eq!(
            AgeGroup::at(Some(d(2005, 6, 16)), on),
            AgeGroup::FourteenToEighteen
        );
        assert_eq!(AgeGroup::at(Some(d(2005, 6, 15)), on), AgeGroup::Unknown);
        assert_eq!(AgeGroup::at(Some(d(2030, 1, 1)), on), AgeGroup::Unknown);
    }

    #[test]
    fn age_group_parsing() {
        assert_eq!(
            "10\u{2013}13".parse::<AgeGroup>(),
            Ok(AgeGroup::TenToThirteen)
        );
        assert_eq!(
            "14-18".parse::<AgeGroup>(),
            Ok(AgeGroup::FourteenToEighteen)
        );
        assert!("19-25".parse::<AgeGroup>().is_err());
        for g in [AgeGroup::SixToNine, AgeGroup::Unknown] {
            assert_eq!(g.as_str().parse::<AgeGroup>(), Ok(g));
            assert_eq!(serde_json::to_value(g).unwrap(), g.as_str());
        }
    }
}
