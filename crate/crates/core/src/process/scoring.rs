use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{read_config, ProcessError};
use crate::fhir::{parse_resource, QuestionnaireDefinition, Resource};
use crate::flatten::{Cell, FlatTable, QuestionnaireRow, SchemaKind, TableError, TableRow};

pub const PHQ9_INSTRUMENT: &str = "PHQ-9";
const PHQ9_DEFINITION: &str = include_str!("../../data/phq9_questionnaire.json");

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[serde(
    tag = "kind",
    rename_all = "camelCase",
    rename_all_fields = "camelCase"
)]
pub enum ScoreError {
    #[error("response {resource_id}: {answered} of {expected} scored items answered")]
    IncompleteResponse {
        resource_id: String,
        answered: usize,
        expected: usize,
    },
    #[error("response {resource_id}: answer {code:?} to {link_id} has no ordinal")]
    UnmappableAnswer {
        resource_id: String,
        link_id: String,
        code: String,
    },
    #[error("no scorer registered for instrument {0:?}")]
    UnknownInstrument(String),
    #[error("instrument {0:?} is already registered")]
    DuplicateInstrument(String),
    #[error("invalid instrument definition: {0}")]
    InvalidDefinition(String),
}

/// Registry key for an instrument name: lowercase ASCII alphanumerics only,
/// so `PHQ-9`, `phq9` and `Phq 9` coincide.
pub fn normalize_instrument(name: &str) -> String {
    name.chars()
        .filter(char::is_ascii_alphanumeric)
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RiskScoreRow {
    pub user_id: String,
    pub resource_id: String,
    pub authored_date: DateTime<Utc>,
    pub instrument: String,
    pub total_score: i64,
    pub severity_band: String,
}

impl TableRow for RiskScoreRow {
    const SCHEMA: SchemaKind = SchemaKind::ScoreFlat;

    fn to_cells(&self) -> Vec<Cell> {
        vec![
            Cell::text(&self.user_id),
            Cell::text(&self.resource_id),
            Cell::Timestamp(self.authored_date),
            Cell::text(&self.instrument),
            Cell::Integer(self.total_score),
            Cell::text(&self.severity_band),
        ]
    }

    fn from_cells(cells: &[Cell]) -> Result<Self, TableError> {
        if cells.len() != 6 {
            return Err(TableError::Arity {
                expected: 6,
                got: cells.len(),
            });
        }
        let text = |i: usize| cells[i].as_text().unwrap_or_default().to_string();
        Ok(Self {
            user_id: text(0),
            resource_id: text(1),
            authored_date: cells[2]
                .as_timestamp()
                .ok_or_else(|| TableError::MissingCell("authoredDate".into()))?,
            instrument: text(3),
            total_score: cells[4]
                .as_integer()
                .ok_or_else(|| TableError::MissingCell("totalScore".into()))?,
            severity_band: text(5),
        })
    }
}

/// One questionnaire response: the `QuestionnaireFlat` rows sharing a resourceId.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseGroup {
    pub user_id: String,
    pub resource_id: String,
    pub authored_date: DateTime<Utc>,
    pub title: String,
    pub rows: Vec<QuestionnaireRow>,
}

impl ResponseGroup {
    /// Groups rows by resourceId, groups in first-seen order.
    pub fn from_table(table: &FlatTable) -> Result<Vec<ResponseGroup>, ProcessError> {
        let rows: Vec<QuestionnaireRow> = table.typed_rows()?;
        let mut order = Vec::new();
        let mut groups: HashMap<String, ResponseGroup> = HashMap::new();
        for r in rows {
            let group = groups.entry(r.resource_id.clone()).or_insert_with(|| {
                order.push(r.resource_id.clone());
                ResponseGroup {
                    user_id: r.user_id.clone(),
                    resource_id: r.resource_id.clone(),
                    authored_date: r.authored_date,
                    title: r.questionnaire_title.clone(),
                    rows: Vec::new(),
                }
            });
            group.rows.push(r);
        }
        Ok(order
            .into_iter()
            .map(|id| groups.remove(&id).expect("grouped above"))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeverityBand {
    pub min: i64,
    pub max: i64,
    pub label: String,
}

/// Ascending, contiguous score bands.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SeverityBands(Vec<SeverityBand>);

impl SeverityBands {
    pub fn new(bands: Vec<SeverityBand>) -> Result<Self, ProcessError> {
        if bands.is_empty() {
            return Err(ProcessError::InvalidBands("no bands".into()));
        }
        for b in &bands {
            if b.min > b.max {
                return Err(ProcessError::InvalidBands(format!(
                    "{:?}: min {} above max {}",
                    b.label, b.min, b.max
                )));
            }
        }
        for w in bands.windows(2) {
            if w[1].min != w[0].max + 1 {
                return Err(ProcessError::InvalidBands(format!(
                    "{:?} ends at {} but {:?} starts at {}",
                    w[0].label, w[0].max, w[1].label, w[1].min
                )));
            }
        }
        Ok(Self(bands))
    }

    /// Standard PHQ-9 depression severity bands.
    pub fn phq9() -> Self {
        let band = |min, max, label: &str| SeverityBand {
            min,
            max,
            label: label.into(),
        };
        Self(vec![
            band(0, 4, "minimal"),
            band(5, 9, "mild"),
            band(10, 14, "moderate"),
            band(15, 19, "moderately severe"),
            band(20, 27, "severe"),
        ])
    }

    pub fn from_json(text: &str) -> Result<Self, ProcessError> {
        let bands: Vec<SeverityBand> =
            serde_json::from_str(text).map_err(|e| ProcessError::InvalidBands(e.to_string()))?;
        Self::new(bands)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ProcessError> {
        Self::new(read_config(path.as_ref())?)
    }

    pub fn bands(&self) -> &[SeverityBand] {
        &self.0
    }

    pub fn band_for(&self, score: i64) -> Option<&str> {
        self.0
            .iter()
            .find(|b| b.min <= score && score <= b.max)
            .map(|b| b.label.as_str())
    }

    fn range(&self) -> (i64, i64) {
        (self.0[0].min, self.0[self.0.len() - 1].max)
    }
}

/// Sums answer ordinals over the nine scored PHQ-9 items. Ordinals come from
/// the questionnaire definition, so any answer coding it declares is usable.
#[derive(Debug, Clone)]
pub struct Phq9Scorer {
    ordinals: BTreeMap<String, HashMap<String, i64>>,
    bands: SeverityBands,
}

impl Phq9Scorer {
    pub const ITEMS: usize = 9;

    pub fn new(
        definition: &QuestionnaireDefinition,
        bands: SeverityBands,
    ) -> Result<Self, ScoreError> {
        let ordinals: BTreeMap<String, HashMap<String, i64>> = definition
            .items
            .iter()
            .map(|q| {
                let map: HashMap<String, i64> = q
                    .answer_options
                    .iter()
                    .filter_map(|o| o.ordinal.map(|v| (o.code.clone(), v)))
                    .collect();
                (q.link_id.clone(), map)
            })
            .filter(|(_, m)| !m.is_empty())
            .collect();
        if ordinals.len() != Self::ITEMS {
            return Err(ScoreError::InvalidDefinition(format!(
                "expected {} scored items, found {}",
                Self::ITEMS,
                ordinals.len()
            )));
        }
        if let Some(v) = ordinals
            .values()
            .flat_map(|m| m.values())
            .find(|v| !(0..=3).contains(*v))
        {
            return Err(ScoreError::InvalidDefinition(format!(
                "ordinal {v} outside 0..=3"
            )));
        }
        check_band_range(&bands)?;
        Ok(Self { ordinals, bands })
    }

    /// The bundled PHQ-9 definition with standard bands.
    pub fn standard() -> Self {
        Self::new(&phq9_definition(), SeverityBands::phq9())
            .expect("bundled PHQ-9 definition is valid")
    }

    pub fn with_bands(mut self, bands: SeverityBands) -> Result<Self, ScoreError> {
        check_band_range(&bands)?;
        self.bands = bands;
        Ok(self)
    }

    pub fn score(&self, group: &ResponseGroup) -> Result<RiskScoreRow, ScoreError> {
        let mut total = 0;
        let mut answered = 0;
        for (link_id, options) in &self.ordinals {
            let Some(row) = group.rows.iter().find(|r| &r.question_id == link_id) else {
                continue;
            };
            let ordinal =
                options
                    .get(&row.answer_code)
                    .ok_or_else(|| ScoreError::UnmappableAnswer {
                        resource_id: group.resource_id.clone(),
                        link_id: link_id.clone(),
                        code: row.answer_code.clone(),
                    })?;
            total += ordinal;
            answered += 1;
        }
        if answered < Self::ITEMS {
            return Err(ScoreError::IncompleteResponse {
                resource_id: group.resource_id.clone(),
                answered,
                expected: Self::ITEMS,
            });
        }
        Ok(RiskScoreRow {
            user_id: group.user_id.clone(),
            resource_id: group.resource_id.clone(),
            authored_date: group.authored_date,
            instrument: PHQ9_INSTRUMENT.into(),
            total_score: total,
            severity_band: self.bands.band_for(total).unwrap_or_default().to_string(),
        })
    }
}

fn check_band_range(bands: &SeverityBands) -> Result<(), ScoreError> {
    let (lo, hi) = bands.range();
    if lo > 0 || hi < 27 {
        return Err(ScoreError::InvalidDefinition(format!(
            "bands cover {lo}..={hi}, need 0..=27"
        )));
    }
    Ok(())
}

/// The bundled PHQ-9 Questionnaire with LOINC answer codes and ordinals.
pub fn phq9_definition() -> QuestionnaireDefinition {
    match parse_resource(PHQ9_DEFINITION).map(|e| e.resource) {
        Ok(Resource::Questionnaire(q)) => q,
        _ => unreachable!("bundled PHQ-9 definition parses as a Questionnaire"),
    }
}

pub type ScoreFn = Arc<dyn Fn(&ResponseGroup) -> Result<RiskScoreRow, ScoreError> + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ScoreRejection {
    pub user_id: String,
    pub resource_id: String,
    pub error: ScoreError,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreReport {
    pub scores: Vec<RiskScoreRow>,
    pub rejected: Vec<ScoreRejection>,
}

impl ScoreReport {
    /// `ScoreFlat` table of the accepted scores.
    pub fn to_table(&self) -> Result<FlatTable, TableError> {
        FlatTable::from_rows(self.scores.iter().cloned())
    }
}

/// Scoring functions keyed by normalized instrument name. PHQ-9 is
/// registered by default.
#[derive(Clone)]
pub struct ScoreRegistry {
    scorers: BTreeMap<String, ScoreFn>,
}

impl Default for ScoreRegistry {
    fn default() -> Self {
        let mut registry = Self::empty();
        let phq9 = Phq9Scorer::standard();
        registry
            .register(PHQ9_INSTRUMENT, Arc::new(move |g| phq9.score(g)))
            .expect("empty registry");
        registry
    }
}

impl std::fmt::Debug for ScoreRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_set().entries(self.scorers.keys()).finish()
    }
}

impl ScoreRegistry {
    pub fn empty() -> Self {
        Self {
            scorers: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, instrument: &str, scorer: ScoreFn) -> Result<(), ScoreError> {
        let key = normalize_instrument(instrument);
        if self.scorers.contains_key(&key) {
            return Err(ScoreError::DuplicateInstrument(instrument.to_string()));
        }
        self.scorers.insert(key, scorer);
        Ok(())
    }

    pub fn instruments(&self) -> impl Iterator<Item = &str> {
        self.scorers.keys().map(String::as_str)
    }

    fn scorer(&self, instrument: &str) -> Option<&ScoreFn> {
        self.scorers.get(&normalize_instrument(instrument))
    }

    /// Scores every response with the scorer matching its questionnaireTitle.
    pub fn score(&self, table: &FlatTable) -> Result<ScoreReport, ProcessError> {
        self.run(table, |g| self.scorer(&g.title))
    }

    /// Scores every response in the table with one instrument's scorer.
    pub fn score_instrument(
        &self,
        instrument: &str,
        table: &FlatTable,
    ) -> Result<ScoreReport, ProcessError> {
        let scorer = self
            .scorer(instrument)
            .ok_or_else(|| ScoreError::UnknownInstrument(instrument.to_string()))?;
        self.run(table, |_| Some(scorer))
    }

    fn run<'a>(
        &'a self,
        table: &FlatTable,
        pick: impl Fn(&ResponseGroup) -> Option<&'a ScoreFn>,
    ) -> Result<ScoreReport, ProcessError> {
        table.expect_schema(SchemaKind::QuestionnaireFlat)?;
        let mut report = ScoreReport::default();
        for group in ResponseGroup::from_table(table)? {
            let result = match pick(&group) {
                Some(f) => f(&group),
                None => Err(ScoreError::UnknownInstrument(group.title.clone())),
            };
            match result {
                Ok(row) => report.scores.push(row),
                Err(error) => report.rejected.push(ScoreRejection {
                    user_id: group.user_id,
                    resource_id: group.resource_id,
                    error,
                }),
            }
        }
        Ok(report)
    }
}

/// Scores every response in a `QuestionnaireFlat` table as PHQ-9.
/// Incomplete or unmappable responses are reported, not scored.
pub fn score_phq9(table: &FlatTable) -> Result<ScoreReport, ProcessError> {
    ScoreRegistry::default().score_instrument(PHQ9_INSTRUMENT, table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fhir::parse_value;
    use crate::flatten::flatten_questionnaire_responses;
    use crate::synth;
    use chrono::TimeZone;
    use proptest::prelude::*;

    fn table(responses: &[(&str, &[u8])]) -> FlatTable {
        let at = Utc.with_ymd_and_hms(2024, 2, 1, 9, 0, 0).unwrap();
        let parsed: Vec<_> = responses
            .iter()
            .map(|(id, ords)| {
                match parse_value(&synth::phq9_response(id, "subject-01", at, ords))
                    .unwrap()
                    .resource
                {
                    Resource::QuestionnaireResponse(r) => r,
                    _ => unreachable!(),
                }
            })
            .collect();
        flatten_questionnaire_responses(&parsed, &[phq9_definition()])
            .unwrap()
            .0
    }

    fn only(report: &ScoreReport) -> &RiskScoreRow {
        assert!(report.rejected.is_empty(), "{:?}", report.rejected);
        assert_eq!(report.scores.len(), 1);
        &report.scores[0]
    }

    #[test]
    fn anchors() {
        let r = score_phq9(&table(&[("qr-1", &[0; 9])])).unwrap();
        assert_eq!(
            (only(&r).total_score, only(&r).severity_band.as_str()),
            (0, "minimal")
        );
        let r = score_phq9(&table(&[("qr-1", &[3; 9])])).unwrap();
        assert_eq!(
            (only(&r).total_score, only(&r).severity_band.as_str()),
            (27, "severe")
        );
        let r = score_phq9(&table(&[("qr-1", &[2, 1, 3, 0, 2, 1, 1, 0, 2])])).unwrap();
        assert_eq!(
            (only(&r).total_score, only(&r).severity_band.as_str()),
            (12, "moderate")
        );
        assert_eq!(only(&r).instrument, "PHQ-9");
    }

    #[test]
    fn band_edges() {
        let b = SeverityBands::phq9();
        let labels: Vec<_> = [0, 4, 5, 9, 10, 14, 15, 19, 20, 27]
            .iter()
            .map(|&s| b.band_for(s).unwrap())
            .collect();
        assert_eq!(
            labels,
            [
                "minimal",
                "minimal",
                "mild",
                "mild",
                "moderate",
                "moderate",
                "moderately severe",
                "moderately severe",
                "severe",
                "severe"
            ]
        );
        assert_eq!(b.band_for(28), None);
    }

    #[test]
    fn incomplete_is_rejected_per_response() {
        let t = table(&[("qr-1", &[1; 9]), ("qr-2", &[1; 8])]);
        let r = score_phq9(&t).unwrap();
        assert_eq!(r.scores.len(), 1);
        assert_eq!(r.scores[0].total_score, 9);
        assert_eq!(
            r.rejected[0].error,
            ScoreError::IncompleteResponse {
                resource_id: "qr-2".into(),
                answered: 8,
                expected: 9
            }
        );
    }

    #[test]
    fn unmappable_answer() {
        let mut rows: Vec<QuestionnaireRow> = table(&[("qr-1", &[0; 9])]).typed_rows().unwrap();
        rows[3].answer_code = "LA-unknown".into();
        let t = FlatTable::from_rows(rows).unwrap();
        let r = score_phq9(&t).unwrap();
        assert!(
            matches!(r.rejected[0].error, ScoreError::UnmappableAnswer { ref code, .. } if code == "LA-unknown")
        );
    }

    #[test]
    fn registry_dispatch() {
        let mut reg = ScoreRegistry::default();
        assert_eq!(
            reg.register("phq 9", Arc::new(|_| unreachable!()))
                .unwrap_err(),
            ScoreError::DuplicateInstrument("phq 9".into())
        );
        let seen = Arc::new(std::sync::Mutex::new(Vec::new()));
        let log = seen.clone();
        reg.register(
            "TEST",
            Arc::new(move |g: &ResponseGroup| {
                log.lock()
                    .unwrap()
                    .push((g.resource_id.clone(), g.rows.len()));
                Ok(RiskScoreRow {
                    user_id: g.user_id.clone(),
                    resource_id: g.resource_id.clone(),
                    authored_date: g.authored_date,
                    instrument: "TEST".into(),
                    total_score: 0,
                    severity_band: String::new(),
                })
            }),
        )
        .unwrap();

        let mut rows: Vec<QuestionnaireRow> = table(&[("qr-1", &[1; 9]), ("qr-2", &[2; 9])])
            .typed_rows()
            .unwrap();
        for r in rows.iter_mut().filter(|r| r.resource_id == "qr-2").take(3) {
            r.questionnaire_title = "TEST".into();
        }
        // only the first row's title decides the group's instrument
        let t = FlatTable::from_rows(rows).unwrap();
        let report = reg.score(&t).unwrap();
        assert_eq!(report.scores.len(), 2);
        assert_eq!(report.scores[0].total_score, 9);
        assert_eq!(report.scores[1].instrument, "TEST");
        assert_eq!(*seen.lock().unwrap(), [("qr-2".to_string(), 9)]);
    }

    #[test]
    fn unknown_title_is_rejected() {
        let mut rows: Vec<QuestionnaireRow> = table(&[("qr-1", &[1; 9])]).typed_rows().unwrap();
        for r in &mut rows {
            r.questionnaire_title = "SSQ".into();
        }
        let r = ScoreRegistry::default()
            .score(&FlatTable::from_rows(rows).unwrap())
            .unwrap();
        assert_eq!(
            r.rejected[0].error,
            ScoreError::UnknownInstrument("SSQ".into())
        );
    }

    #[test]
    fn bands_json_and_validation() {
        let b = SeverityBands::from_json(&serde_json::to_string(&SeverityBands::phq9()).unwrap())
            .unwrap();
        assert_eq!(b, SeverityBands::phq9());
        assert!(SeverityBands::from_json(
            r#"[{"min":0,"max":4,"label":"a"},{"min":6,"max":27,"label":"b"}]"#
        )
        .is_err());
        let short = SeverityBands::from_json(r#"[{"min":0,"max":20,"label":"a"}]"#).unwrap();
        assert!(Phq9Scorer::standard().with_bands(short).is_err());
    }

    #[test]
    fn score_table_schema() {
        let r = score_phq9(&table(&[("qr-1", &[1; 9])])).unwrap();
        let t = r.to_table().unwrap();
        assert_eq!(t.schema(), SchemaKind::ScoreFlat);
        assert_eq!(t.typed_rows::<RiskScoreRow>().unwrap(), r.scores);
        assert!(score_phq9(&FlatTable::new(SchemaKind::ObservationFlat)).is_err());
    }

    proptest! {
        #[test]
        fn total_is_bounded_and_order_free(
            ords in proptest::collection::vec(0u8..4, 9),
            perm in Just((0..9usize).collect::<Vec<_>>()).prop_shuffle(),
        ) {
            let t = table(&[("qr-1", &ords)]);
            let base = score_phq9(&t).unwrap();
            let mut rows: Vec<QuestionnaireRow> = t.typed_rows().unwrap();
            rows = perm.iter().map(|&i| rows[i].clone()).collect();
            let shuffled = score_phq9(&FlatTable::from_rows(rows).unwrap()).unwrap();
            let total = only(&base).total_score;
            prop_assert_eq!(total, ords.iter().map(|&o| o as i64).sum::<i64>());
            prop_assert!((0..=27).contains(&total));
            prop_assert_eq!(&base, &shuffled);
        }
    }
}
