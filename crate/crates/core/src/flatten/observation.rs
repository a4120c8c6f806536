use std::collections::BTreeMap;

use super::table::{EcgRow, FlatTable, ObservationRow};
use super::FlattenError;
use crate::fhir::{decode_sampled_data, CodeRegistry, ComponentValue, MetricKind, Observation};
use crate::time::format_timestamp;

fn is_ecg(obs: &Observation, registry: &CodeRegistry) -> bool {
    registry.classify(obs) == MetricKind::Ecg || obs.sampled_data().is_some()
}

fn display_name(obs: &Observation, registry: &CodeRegistry) -> String {
    let coding = obs.primary_coding();
    coding
        .display
        .clone()
        .or_else(|| registry.lookup(coding).map(|e| e.display_name.clone()))
        .unwrap_or_default()
}

fn record_interval_ends<'a>(
    table: &mut FlatTable,
    observations: impl Iterator<Item = &'a Observation>,
) {
    let ends: BTreeMap<&str, String> = observations
        .filter_map(|o| {
            o.effective_end
                .map(|e| (o.resource_id.as_str(), format_timestamp(&e)))
        })
        .collect();
    if !ends.is_empty() {
        table.set_provenance(
            "effectiveEnd",
            serde_json::to_string(&ends).expect("string map serializes"),
        );
    }
}

/// Flattens scalar observations into an `ObservationFlat` table, one row per
/// observation, sorted by (userId, effectiveDate, resourceId).
///
/// ECG observations must go through [`flatten_ecg`].
pub fn flatten_observations<'a>(
    observations: impl IntoIterator<Item = &'a Observation>,
    registry: &CodeRegistry,
) -> Result<FlatTable, FlattenError> {
    let observations: Vec<&Observation> = observations.into_iter().collect();
    let mut rows = Vec::with_capacity(observations.len());
    for obs in &observations {
        if is_ecg(obs, registry) {
            return Err(FlattenError::MixedKind {
                resource_id: obs.resource_id.clone(),
            });
        }
        let quantity = obs
            .value_quantity
            .as_ref()
            .ok_or_else(|| FlattenError::MissingValue {
                resource_id: obs.resource_id.clone(),
            })?;
        rows.push(ObservationRow {
            user_id: obs.subject_id.clone(),
            resource_id: obs.resource_id.clone(),
            quantity_name: registry.classify(obs).label().to_string(),
            unit: quantity.unit.clone(),
            value: quantity.value,
            loinc_code: obs.primary_coding().code.clone(),
            display_name: display_name(obs, registry),
            device_code: obs
                .device
                .as_ref()
                .map(|d| d.code.clone())
                .unwrap_or_default(),
            effective_date: obs.effective_start,
        });
    }
    rows.sort_by(|a, b| {
        (&a.user_id, a.effective_date, &a.resource_id).cmp(&(
            &b.user_id,
            b.effective_date,
            &b.resource_id,
        ))
    });
    let mut table = FlatTable::from_rows(rows)?;
    table.validate()?;
    record_interval_ends(&mut table, observations.into_iter());
    Ok(table)
}

/// Flattens wearable ECG observations into an `EcgFlat` table with the
/// decoded waveform inlined.
pub fn flatten_ecg<'a>(
    observations: impl IntoIterator<Item = &'a Observation>,
    registry: &CodeRegistry,
) -> Result<FlatTable, FlattenError> {
    let observations: Vec<&Observation> = observations.into_iter().collect();
    let mut rows = Vec::with_capacity(observations.len());
    for obs in &observations {
        rows.push(ecg_row(obs, registry)?);
    }
    rows.sort_by(|a, b| {
        (&a.user_id, a.effective_date, &a.resource_id).cmp(&(
            &b.user_id,
            b.effective_date,
            &b.resource_id,
        ))
    });
    let mut table = FlatTable::from_rows(rows)?;
    table.validate()?;
    record_interval_ends(&mut table, observations.into_iter());
    Ok(table)
}

fn is_classification(codes: &[crate::fhir::Coding]) -> bool {
    codes.iter().any(|c| {
        c.code.to_ascii_lowercase().contains("classification")
            || c.display
                .as_deref()
                .is_some_and(|d| d.to_ascii_lowercase().contains("classification"))
    })
}

fn ecg_row(obs: &Observation, registry: &CodeRegistry) -> Result<EcgRow, FlattenError> {
    let waveform = obs
        .sampled_data()
        .map(decode_sampled_data)
        .transpose()
        .map_err(|source| FlattenError::BadToken {
            resource_id: obs.resource_id.clone(),
            source,
        })?;

    let heart_rate = obs.components.iter().find_map(|c| match &c.value {
        ComponentValue::Quantity(q)
            if registry.classify_codings(&c.code) == MetricKind::HeartRate =>
        {
            Some(q)
        }
        _ => None,
    });

    let strings: Vec<(&[crate::fhir::Coding], &str)> = obs
        .components
        .iter()
        .filter_map(|c| match &c.value {
            ComponentValue::String(s) => Some((c.code.as_slice(), s.as_str())),
            _ => None,
        })
        .collect();
    let classification = strings
        .iter()
        .find(|(codes, _)| is_classification(codes))
        .or_else(|| strings.first())
        .map(|(_, s)| s.to_string())
        .unwrap_or_default();

    let (unit, count, fs, recording) = match waveform {
        Some(w) => {
            let recording = if w.samples.is_empty() {
                None
            } else {
                Some(w.samples)
            };
            let count = recording.as_ref().map_or(0, Vec::len) as i64;
            (w.unit, count, Some(w.sampling_frequency_hz), recording)
        }
        None => (String::new(), 0, None, None),
    };

    Ok(EcgRow {
        user_id: obs.subject_id.clone(),
        resource_id: obs.resource_id.clone(),
        quantity_name: MetricKind::Ecg.label().to_string(),
        unit,
        value: heart_rate.map(|q| q.value),
        loinc_code: obs.primary_coding().code.clone(),
        display_name: display_name(obs, registry),
        device_code: obs
            .device
            .as_ref()
            .map(|d| d.code.clone())
            .unwrap_or_default(),
        effective_date: obs.effective_start,
        number_of_measurements: count,
        sampling_frequency_hz: fs,
        ecg_classification: classification,
        heart_rate_bpm: heart_rate.map(|q| q.value),
        heart_rate_unit: heart_rate.map(|q| q.unit.clone()).unwrap_or_default(),
        ecg_recording: recording,
    })
}

/// Splits observations into (scalar, ECG) using the same rule the
/// flatteners enforce.
pub fn partition_observations<'a>(
    observations: impl IntoIterator<Item = &'a Observation>,
    registry: &CodeRegistry,
) -> (Vec<&'a Observation>, Vec<&'a Observation>) {
    observations.into_iter().partition(|o| !is_ecg(o, registry))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fhir::{parse_value, Resource};
    use crate::flatten::{Cell, SchemaKind};
    use crate::synth::{self, EcgFixture};
    use chrono::{TimeZone, Utc};

    fn parse_obs(v: serde_json::Value) -> Observation {
        match parse_value(&v).unwrap().resource {
            Resource::Observation(o) => o,
            other => panic!("not an observation: {other:?}"),
        }
    }

    #[test]
    fn step_fixture_row() {
        let at = Utc.with_ymd_and_hms(2024, 1, 5, 8, 0, 0).unwrap();
        let obs = parse_obs(synth::step_observation("obs-1", "user-a", at, 1000.0));
        let t = flatten_observations([&obs], &CodeRegistry::default()).unwrap();
        let rows: Vec<ObservationRow> = t.typed_rows().unwrap();
        assert_eq!(
            rows,
            [ObservationRow {
                user_id: "user-a".into(),
                resource_id: "obs-1".into(),
                quantity_name: "Step Count".into(),
                unit: "steps".into(),
                value: 1000.0,
                loinc_code: "55423-8".into(),
                display_name: "Number of steps in unspecified time Pedometer".into(),
                device_code: String::new(),
                effective_date: at,
            }]
        );
    }

    #[test]
    fn empty_input_keeps_header() {
        let t = flatten_observations([], &CodeRegistry::default()).unwrap();
        assert!(t.is_empty());
        assert_eq!(t.schema(), SchemaKind::ObservationFlat);
        assert_eq!(t.columns().len(), 9);
    }

    #[test]
    fn rows_are_time_sorted() {
        let late = Utc.with_ymd_and_hms(2024, 1, 6, 8, 0, 0).unwrap();
        let early = Utc.with_ymd_and_hms(2024, 1, 5, 8, 0, 0).unwrap();
        let a = parse_obs(synth::step_observation("obs-a", "u", late, 1.0));
        let b = parse_obs(synth::step_observation("obs-b", "u", early, 2.0));
        let t = flatten_observations([&a, &b], &CodeRegistry::default()).unwrap();
        let ids: Vec<_> = t.rows().iter().map(|r| r[1].clone()).collect();
        assert_eq!(ids, [Cell::text("obs-b"), Cell::text("obs-a")]);
    }

    #[test]
    fn ecg_is_routed_separately() {
        let at = Utc.with_ymd_and_hms(2024, 1, 5, 8, 0, 0).unwrap();
        let ecg = parse_obs(synth::ecg_observation(&EcgFixture::new(
            "e",
            "u",
            at,
            "1 2".into(),
        )));
        assert!(matches!(
            flatten_observations([&ecg], &CodeRegistry::default()),
            Err(FlattenError::MixedKind { .. })
        ));
    }

    #[test]
    fn interval_end_goes_to_provenance() {
        let text = r#"{"resourceType":"Observation","id":"o","code":{"coding":[{"system":"http://loinc.org","code":"55423-8"}]},
            "subject":{"reference":"Patient/u"},"effectivePeriod":{"start":"2024-01-01T00:00:00Z","end":"2024-01-01T01:00:00Z"},
            "valueQuantity":{"value":5,"unit":"steps"}}"#;
        let obs = parse_obs(serde_json::from_str(text).unwrap());
        let t = flatten_observations([&obs], &CodeRegistry::default()).unwrap();
        assert_eq!(
            t.provenance()["effectiveEnd"],
            r#"{"o":"2024-01-01T01:00:00Z"}"#
        );
        assert_eq!(
            t.rows()[0][8],
            Cell::Timestamp(Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap())
        );
    }

    #[test]
    fn ecg_30s_at_512hz() {
        let at = Utc.with_ymd_and_hms(2024, 1, 5, 8, 0, 0).unwrap();
        let data = synth::synthetic_ecg_tokens(synth::ECG_SAMPLES_30S, 66.0, 3, &[]);
        let ecg = parse_obs(synth::ecg_observation(
            &EcgFixture::new("ecg-1", "u", at, data).heart_rate(66.0),
        ));
        let t = flatten_ecg([&ecg], &CodeRegistry::default()).unwrap();
        let row = &t.typed_rows::<EcgRow>().unwrap()[0];
        assert_eq!(row.number_of_measurements, 15360);
        assert_eq!(row.sampling_frequency_hz, Some(512.0));
        assert_eq!(row.heart_rate_bpm, Some(66.0));
        assert_eq!(row.value, Some(66.0));
        assert_eq!(row.ecg_recording.as_ref().map(Vec::len), Some(15360));
    }

    #[test]
    fn ecg_carries_classification_and_rate() {
        let at = Utc.with_ymd_and_hms(2024, 1, 5, 8, 0, 0).unwrap();
        let ecg = parse_obs(synth::ecg_observation(
            &EcgFixture::new("ecg-2", "u", at, "1 E 3".into())
                .heart_rate(190.0)
                .classification("SVT"),
        ));
        let row = &flatten_ecg([&ecg], &CodeRegistry::default())
            .unwrap()
            .typed_rows::<EcgRow>()
            .unwrap()[0];
        assert_eq!(row.ecg_classification, "SVT");
        assert_eq!(row.heart_rate_bpm, Some(190.0));
        assert_eq!(row.heart_rate_unit, "beats/minute");
        assert_eq!(row.ecg_recording, Some(vec![Some(1.0), None, Some(3.0)]));
    }

    #[test]
    fn ecg_without_device_annotations_has_empty_cells() {
        let at = Utc.with_ymd_and_hms(2024, 1, 5, 8, 0, 0).unwrap();
        let ecg = parse_obs(synth::ecg_observation(&EcgFixture::new(
            "ecg-3",
            "u",
            at,
            "0".into(),
        )));
        let row = &flatten_ecg([&ecg], &CodeRegistry::default())
            .unwrap()
            .typed_rows::<EcgRow>()
            .unwrap()[0];
        assert_eq!(row.ecg_classification, "");
        assert_eq!(row.heart_rate_bpm, None);
        assert_eq!(row.value, None);
    }
}
