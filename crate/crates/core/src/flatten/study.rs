use std::collections::BTreeMap;

use super::observation::partition_observations;
use super::questionnaire::{QuestionnaireReport, RosterError};
use super::{flatten_ecg, flatten_observations, flatten_questionnaire_responses, user_roster};
use super::{FlatTable, FlattenError};
use crate::fhir::{CodeRegistry, PatientRecord, ResourceEnvelope};
use crate::store::{ResourceStore, StoreQuery};

/// One record per subject seen in `envelopes`, enriched from any Patient
/// resources, sorted by subject id.
pub fn collect_patients<'a>(
    envelopes: impl IntoIterator<Item = &'a ResourceEnvelope>,
) -> Vec<PatientRecord> {
    let mut users: BTreeMap<String, PatientRecord> = BTreeMap::new();
    for env in envelopes {
        let Some(subject) = env.resource.subject_id() else {
            continue;
        };
        let record = users
            .entry(subject.to_string())
            .or_insert_with(|| PatientRecord::new(subject));
        if let Some(p) = env.as_patient() {
            if p.birth_date.is_some() {
                record.birth_date = p.birth_date;
            }
            record
                .demographics
                .extend(p.demographics.iter().map(|(k, v)| (k.clone(), v.clone())));
        }
    }
    users.into_values().collect()
}

/// Every flat table derivable from a set of resources.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyTables {
    pub observations: FlatTable,
    pub ecgs: FlatTable,
    pub questionnaires: FlatTable,
    pub users: FlatTable,
    pub questionnaire_report: QuestionnaireReport,
}

impl StudyTables {
    /// Flattens resources. Questionnaire text is resolved against the
    /// Questionnaire resources present, falling back to the bundled PHQ-9.
    pub fn from_envelopes(
        envelopes: &[ResourceEnvelope],
        registry: &CodeRegistry,
    ) -> Result<Self, FlattenError> {
        let (scalar, ecg) = partition_observations(
            envelopes.iter().filter_map(|e| e.as_observation()),
            registry,
        );
        let mut definitions: Vec<_> = envelopes
            .iter()
            .filter_map(|e| e.as_questionnaire())
            .cloned()
            .collect();
        let phq9 = crate::process::phq9_definition();
        if !definitions
            .iter()
            .any(|d| d.questionnaire_ref == phq9.questionnaire_ref)
        {
            definitions.push(phq9);
        }
        let (questionnaires, questionnaire_report) = flatten_questionnaire_responses(
            envelopes
                .iter()
                .filter_map(|e| e.as_questionnaire_response()),
            &definitions,
        )?;
        Ok(Self {
            observations: flatten_observations(scalar, registry)?,
            ecgs: flatten_ecg(ecg, registry)?,
            questionnaires,
            users: user_roster(&collect_patients(envelopes))?,
            questionnaire_report,
        })
    }

    pub fn load(
        store: &dyn ResourceStore,
        registry: &CodeRegistry,
        query: &StoreQuery,
    ) -> Result<Self, RosterError> {
        Ok(Self::from_envelopes(&store.query(query)?, registry)?)
    }
}
