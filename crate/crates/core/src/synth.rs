//! Deterministic synthetic FHIR corpora.
//!
//! Nothing here is real patient data. Corpora are seeded, so the same
//! [`CorpusSpec`] always yields byte-identical documents.

use std::fs;
use std::io;
use std::path::Path;

use chrono::{DateTime, Duration, NaiveDate, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::fhir::{canonical_json, CodeRegistry, Coding, MetricKind, LOINC_SYSTEM};
use crate::time::{format_date, format_timestamp, midnight};

pub const HEALTHKIT_SYSTEM: &str = "http://developer.apple.com/documentation/healthkit";
pub const MDC_SYSTEM: &str = "urn:oid:2.16.840.1.113883.6.24";
pub const PHQ9_URL: &str = "http://loinc.org/q/44249-1";

/// Sampling period that yields 512 Hz.
pub const ECG_PERIOD_MS: f64 = 1.953125;
pub const ECG_SAMPLES_30S: usize = 15_360;

/// PHQ-9 item link ids in questionnaire order.
pub const PHQ9_LINK_IDS: [&str; 9] = [
    "44250-9", "44255-8", "44259-0", "44254-1", "44251-7", "44258-2", "44252-5", "44253-3",
    "44260-8",
];
/// PHQ-9 answer codes indexed by ordinal.
pub const PHQ9_ANSWERS: [(&str, &str); 4] = [
    ("LA6568-5", "Not at all"),
    ("LA6569-3", "Several days"),
    ("LA6570-1", "More than half the days"),
    ("LA6571-9", "Nearly every day"),
];

fn reference(subject: &str) -> Value {
    json!({ "reference": format!("Patient/{subject}") })
}

/// Scalar observation with a single coding and `valueQuantity`.
pub fn quantity_observation(
    id: &str,
    subject: &str,
    coding: &Coding,
    at: DateTime<Utc>,
    value: f64,
    unit: &str,
) -> Value {
    let mut code = json!({ "system": coding.system, "code": coding.code });
    if let Some(d) = &coding.display {
        code["display"] = json!(d);
    }
    json!({
        "resourceType": "Observation",
        "id": id,
        "status": "final",
        "category": [{ "coding": [{
            "system": "http://terminology.hl7.org/CodeSystem/observation-category",
            "code": "activity",
        }]}],
        "code": { "coding": [code] },
        "subject": reference(subject),
        "effectiveDateTime": format_timestamp(&at),
        "valueQuantity": { "value": value, "unit": unit },
    })
}

/// Step count observation shaped like a phone pedometer export.
pub fn step_observation(id: &str, subject: &str, at: DateTime<Utc>, steps: f64) -> Value {
    let coding = Coding::new(LOINC_SYSTEM, "55423-8")
        .with_display("Number of steps in unspecified time Pedometer");
    quantity_observation(id, subject, &coding, at, steps, "steps")
}

/// Inputs for [`ecg_observation`].
#[derive(Debug, Clone)]
pub struct EcgFixture {
    pub id: String,
    pub subject: String,
    pub at: DateTime<Utc>,
    /// Raw `SampledData.data` token string.
    pub data: String,
    pub period_ms: f64,
    pub heart_rate_bpm: Option<f64>,
    pub classification: Option<String>,
}

impl EcgFixture {
    pub fn new(id: &str, subject: &str, at: DateTime<Utc>, data: String) -> Self {
        Self {
            id: id.to_string(),
            subject: subject.to_string(),
            at,
            data,
            period_ms: ECG_PERIOD_MS,
            heart_rate_bpm: None,
            classification: None,
        }
    }

    pub fn heart_rate(mut self, bpm: f64) -> Self {
        self.heart_rate_bpm = Some(bpm);
        self
    }

    pub fn classification(mut self, label: &str) -> Self {
        self.classification = Some(label.to_string());
        self
    }
}

/// Single-lead wearable ECG observation.
pub fn ecg_observation(f: &EcgFixture) -> Value {
    let mut components = vec![json!({
        "code": { "coding": [{ "system": MDC_SYSTEM, "code": "131329", "display": "MDC_ECG_ELEC_POTL_I" }] },
        "valueSampledData": {
            "origin": { "value": 0, "unit": "uV" },
            "period": f.period_ms,
            "factor": 1,
            "dimensions": 1,
            "data": f.data,
        },
    })];
    if let Some(label) = &f.classification {
        components.push(json!({
            "code": { "coding": [{
                "system": HEALTHKIT_SYSTEM,
                "code": "HKElectrocardiogram.Classification",
                "display": "Classification",
            }]},
            "valueString": label,
        }));
    }
    if let Some(bpm) = f.heart_rate_bpm {
        components.push(json!({
            "code": { "coding": [{ "system": LOINC_SYSTEM, "code": "8867-4", "display": "Heart rate" }] },
            "valueQuantity": { "value": bpm, "unit": "beats/minute" },
        }));
    }
    let end = f.at
        + Duration::milliseconds((f.data.split_whitespace().count() as f64 * f.period_ms) as i64);
    json!({
        "resourceType": "Observation",
        "id": f.id,
        "status": "final",
        "code": { "coding": [
            { "system": MDC_SYSTEM, "code": "131328", "display": "MDC_ECG_ELEC_POTL" },
            { "system": HEALTHKIT_SYSTEM, "code": "HKElectrocardiogram", "display": "Electrocardiogram" },
        ]},
        "subject": reference(&f.subject),
        "effectivePeriod": { "start": format_timestamp(&f.at), "end": format_timestamp(&end) },
        "device": { "identifier": { "system": "urn:fhirflow:device", "value": "watch" }, "display": "Wearable" },
        "component": components,
    })
}

/// Synthetic single-lead trace in microvolts: a QRS-like spike per beat on a
/// small baseline wander. `gaps` lists sample indices emitted as `E`.
pub fn synthetic_ecg_tokens(samples: usize, bpm: f64, seed: u64, gaps: &[usize]) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs = 1000.0 / ECG_PERIOD_MS;
    let beat = (60.0 / bpm * fs).max(1.0);
    let mut tokens = Vec::with_capacity(samples);
    for i in 0..samples {
        if gaps.contains(&i) {
            tokens.push("E".to_string());
            continue;
        }
        let phase = (i as f64 % beat) / beat;
        let qrs = 900.0 * (-((phase - 0.3) * 60.0).powi(2)).exp();
        let t_wave = 180.0 * (-((phase - 0.6) * 12.0).powi(2)).exp();
        let wander = 40.0 * (i as f64 / fs * 0.6).sin();
        let noise: f64 = rng.random_range(-8.0..8.0);
        tokens.push(format!(
            "{}",
            (qrs + t_wave + wander + noise).round() as i64
        ));
    }
    tokens.join(" ")
}

/// PHQ-9 response; `ordinals[i]` answers item `i`.
pub fn phq9_response(id: &str, subject: &str, at: DateTime<Utc>, ordinals: &[u8]) -> Value {
    let items: Vec<Value> = ordinals
        .iter()
        .zip(PHQ9_LINK_IDS)
        .map(|(&o, link)| {
            let (code, display) = PHQ9_ANSWERS[o as usize];
            json!({
                "linkId": link,
                "answer": [{ "valueCoding": { "system": LOINC_SYSTEM, "code": code, "display": display } }],
            })
        })
        .collect();
    json!({
        "resourceType": "QuestionnaireResponse",
        "id": id,
        "status": "completed",
        "questionnaire": PHQ9_URL,
        "subject": reference(subject),
        "authored": format_timestamp(&at),
        "item": items,
    })
}

pub fn patient(id: &str, birth_date: Option<NaiveDate>, gender: Option<&str>) -> Value {
    let mut v = json!({ "resourceType": "Patient", "id": id });
    if let Some(b) = birth_date {
        v["birthDate"] = json!(format_date(&b));
    }
    if let Some(g) = gender {
        v["gender"] = json!(g);
    }
    v
}

/// The bundled PHQ-9 `Questionnaire` resource.
pub fn phq9_questionnaire() -> Value {
    serde_json::from_str(include_str!("../data/phq9_questionnaire.json"))
        .expect("bundled questionnaire is valid JSON")
}

/// Shape of a generated corpus.
#[derive(Debug, Clone)]
pub struct CorpusSpec {
    pub seed: u64,
    pub users: usize,
    pub start: NaiveDate,
    pub days: u32,
    pub metrics: Vec<MetricKind>,
    pub readings_per_day: usize,
    pub ecgs_per_user: usize,
    pub ecg_samples: usize,
    pub phq9_per_user: usize,
    pub patients: bool,
}

impl CorpusSpec {
    /// A few users, all resource kinds, short ECGs. Fast enough for unit tests.
    pub fn small() -> Self {
        Self {
            seed: 7,
            users: 3,
            start: NaiveDate::from_ymd_opt(2024, 1, 1).unwrap(),
            days: 10,
            metrics: vec![MetricKind::StepCount, MetricKind::HeartRate],
            readings_per_day: 2,
            ecgs_per_user: 2,
            ecg_samples: 512,
            phq9_per_user: 1,
            patients: true,
        }
    }

    /// Five metrics, full 30 s ECGs.
    pub fn study() -> Self {
        Self {
            seed: 2024,
            users: 5,
            start: NaiveDate::from_ymd_opt(2024, 1, 1).unwrap(),
            days: 28,
            metrics: vec![
                MetricKind::StepCount,
                MetricKind::HeartRate,
                MetricKind::ActiveEnergy,
                MetricKind::Vo2Max,
                MetricKind::PhysicalEffort,
            ],
            readings_per_day: 3,
            ecgs_per_user: 4,
            ecg_samples: ECG_SAMPLES_30S,
            phq9_per_user: 2,
            patients: true,
        }
    }

    pub fn generate(&self) -> Corpus {
        let registry = CodeRegistry::default();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut corpus = Corpus::default();
        let mut obs_seq = 0usize;
        let mut ecg_seq = 0usize;
        let mut qr_seq = 0usize;

        for u in 0..self.users {
            let subject = format!("subject-{:02}", u + 1);
            if self.patients {
                let age = 6 + (u as i32 * 3) % 13;
                let birth = self
                    .start
                    .with_year(self.start.year() - age)
                    .unwrap_or(self.start);
                let gender = if u % 2 == 0 { "female" } else { "male" };
                corpus
                    .patients
                    .push(patient(&subject, Some(birth), Some(gender)));
            }
            for metric in &self.metrics {
                let coding = registry
                    .codings_for(metric)
                    .into_iter()
                    .next()
                    .unwrap_or_else(|| Coding::new("urn:fhirflow:synthetic", metric.id()));
                let unit = registry
                    .entries()
                    .iter()
                    .find(|e| &e.metric_kind == metric)
                    .map(|e| e.unit.clone())
                    .unwrap_or_default();
                for day in 0..self.days {
                    let date = self.start + Duration::days(day as i64);
                    for r in 0..self.readings_per_day {
                        obs_seq += 1;
                        let minutes = 6 * 60
                            + (r as i64 * 14 * 60) / self.readings_per_day.max(1) as i64
                            + rng.random_range(0..50);
                        let at = midnight(date) + Duration::minutes(minutes);
                        let value = synthetic_value(metric, &mut rng);
                        corpus.observations.push(quantity_observation(
                            &format!("obs-{obs_seq:06}"),
                            &subject,
                            &coding,
                            at,
                            value,
                            &unit,
                        ));
                    }
                }
            }
            for e in 0..self.ecgs_per_user {
                ecg_seq += 1;
                let day = (e as u32 * 7 + u as u32) % self.days.max(1);
                let at = midnight(self.start + Duration::days(day as i64))
                    + Duration::minutes(600 + rng.random_range(0..300));
                let (label, bpm) = match (u + e) % 4 {
                    0 => ("Sinus Rhythm", 66.0),
                    1 => ("Sinus Rhythm", 88.0),
                    2 => ("High Heart Rate", 190.0),
                    _ => ("Inconclusive", 120.0),
                };
                let data =
                    synthetic_ecg_tokens(self.ecg_samples, bpm, self.seed ^ ecg_seq as u64, &[]);
                corpus.ecgs.push(ecg_observation(
                    &EcgFixture::new(&format!("ecg-{ecg_seq:05}"), &subject, at, data)
                        .heart_rate(bpm)
                        .classification(label),
                ));
            }
            for k in 0..self.phq9_per_user {
                qr_seq += 1;
                let day = (k as u32 * 14) % self.days.max(1);
                let at = midnight(self.start + Duration::days(day as i64)) + Duration::hours(20);
                let ordinals: Vec<u8> = (0..9).map(|_| rng.random_range(0..4u8)).collect();
                corpus.responses.push(phq9_response(
                    &format!("qr-{qr_seq:05}"),
                    &subject,
                    at,
                    &ordinals,
                ));
            }
        }
        if self.phq9_per_user > 0 {
            corpus.questionnaires.push(phq9_questionnaire());
        }
        corpus
    }
}

use chrono::Datelike;

fn synthetic_value(metric: &MetricKind, rng: &mut ChaCha8Rng) -> f64 {
    match metric {
        MetricKind::StepCount => rng.random_range(100..1500) as f64,
        MetricKind::HeartRate => rng.random_range(55..125) as f64,
        MetricKind::Hrv => rng.random_range(20..90) as f64,
        MetricKind::ActiveEnergy => (rng.random_range(100..800) as f64) / 10.0,
        MetricKind::Vo2Max => (rng.random_range(350..500) as f64) / 10.0,
        MetricKind::PhysicalEffort => (rng.random_range(10..80) as f64) / 10.0,
        _ => rng.random_range(0..100) as f64,
    }
}

/// Generated documents grouped by kind.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub observations: Vec<Value>,
    pub ecgs: Vec<Value>,
    pub responses: Vec<Value>,
    pub questionnaires: Vec<Value>,
    pub patients: Vec<Value>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.observations.len()
            + self.ecgs.len()
            + self.responses.len()
            + self.questionnaires.len()
            + self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all(&self) -> impl Iterator<Item = &Value> {
        self.patients
            .iter()
            .chain(&self.questionnaires)
            .chain(&self.observations)
            .chain(&self.ecgs)
            .chain(&self.responses)
    }

    /// Writes one line-delimited JSON file per group into `dir`.
    pub fn write_to(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        let groups: [(&str, &[Value]); 5] = [
            ("patients.ndjson", &self.patients),
            ("questionnaires.ndjson", &self.questionnaires),
            ("observations.ndjson", &self.observations),
            ("ecg.ndjson", &self.ecgs),
            ("responses.ndjson", &self.responses),
        ];
        for (name, docs) in groups {
            if docs.is_empty() {
                continue;
            }
            let mut text = String::new();
            for d in docs {
                text.push_str(&canonical_json(d));
                text.push('\n');
            }
            fs::write(dir.join(name), text)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fhir::parse_value;

    #[test]
    fn generated_documents_all_parse() {
        let corpus = CorpusSpec::small().generate();
        assert!(!corpus.is_empty());
        for doc in corpus.all() {
            parse_value(doc).unwrap_or_else(|e| panic!("{e}: {doc}"));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = CorpusSpec::small().generate();
        let b = CorpusSpec::small().generate();
        assert_eq!(a.all().collect::<Vec<_>>(), b.all().collect::<Vec<_>>());
    }

    #[test]
    fn ecg_tokens_have_requested_length_and_gaps() {
        let tokens = synthetic_ecg_tokens(100, 60.0, 1, &[3, 50]);
        let parts: Vec<&str> = tokens.split(' ').collect();
        assert_eq!(parts.len(), 100);
        assert_eq!(parts[3], "E");
        assert_eq!(parts[50], "E");
    }
}
