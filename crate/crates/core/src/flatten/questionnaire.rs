use serde::Serialize;

use super::table::{FlatTable, QuestionnaireRow};
use super::FlattenError;
use crate::fhir::{PatientRecord, QuestionnaireDefinition, QuestionnaireResponse};
use crate::flatten::Cell;
use crate::store::{ResourceStore, StoreError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct UnresolvedText {
    pub resource_id: String,
    pub link_id: String,
    /// `questionText` or `answerText`.
    pub field: &'static str,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct QuestionnaireReport {
    pub unresolved: Vec<UnresolvedText>,
}

/// Flattens responses to one row per answered item.
///
/// Question and answer text missing from a response are looked up in the
/// matching definition; cells that still cannot be resolved stay empty and
/// are listed in the report.
pub fn flatten_questionnaire_responses<'a>(
    responses: impl IntoIterator<Item = &'a QuestionnaireResponse>,
    definitions: &[QuestionnaireDefinition],
) -> Result<(FlatTable, QuestionnaireReport), FlattenError> {
    let mut responses: Vec<&QuestionnaireResponse> = responses.into_iter().collect();
    responses.sort_by(|a, b| {
        (&a.subject_id, a.authored, &a.resource_id).cmp(&(
            &b.subject_id,
            b.authored,
            &b.resource_id,
        ))
    });

    let mut report = QuestionnaireReport::default();
    let mut rows = Vec::new();
    for response in responses {
        let def = definitions
            .iter()
            .find(|d| d.matches_ref(&response.questionnaire_ref));
        let title = def
            .map(|d| d.title.clone())
            .unwrap_or_else(|| response.questionnaire_ref.clone());
        for item in &response.items {
            let question = def.and_then(|d| d.item(&item.link_id));
            let question_text = item
                .question_text
                .clone()
                .or_else(|| question.map(|q| q.text.clone()).filter(|t| !t.is_empty()));
            let answer_text = item.answer_text.clone().or_else(|| {
                question
                    .and_then(|q| q.option(&item.answer_code))
                    .map(|o| o.display.clone())
            });
            for (field, resolved) in [
                ("questionText", question_text.is_some()),
                ("answerText", answer_text.is_some()),
            ] {
                if !resolved {
                    report.unresolved.push(UnresolvedText {
                        resource_id: response.resource_id.clone(),
                        link_id: item.link_id.clone(),
                        field,
                    });
                }
            }
            rows.push(QuestionnaireRow {
                user_id: response.subject_id.clone(),
                resource_id: response.resource_id.clone(),
                authored_date: response.authored,
                questionnaire_title: title.clone(),
                question_id: item.link_id.clone(),
                question_text: question_text.unwrap_or_default(),
                answer_code: item.answer_code.clone(),
                answer_text: answer_text.unwrap_or_default(),
            });
        }
    }
    let table = FlatTable::from_rows(rows)?;
    table.validate()?;
    Ok((table, report))
}

/// `UserFlat` table from patient records, one row per subject, sorted.
pub fn user_roster(records: &[PatientRecord]) -> Result<FlatTable, FlattenError> {
    let mut records: Vec<&PatientRecord> = records.iter().collect();
    records.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
    records.dedup_by(|a, b| a == b);

    let mut table = FlatTable::user_table(records.iter().flat_map(|r| r.demographics.keys()));
    let keys: Vec<String> = table.column_names()[2..]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for r in records {
        let mut row = vec![
            Cell::text(&r.subject_id),
            r.birth_date.map_or(Cell::Null, Cell::Date),
        ];
        row.extend(
            keys.iter()
                .map(|k| Cell::text(r.demographics.get(k).cloned().unwrap_or_default())),
        );
        table.push_row(row)?;
    }
    table.validate()?;
    Ok(table)
}

#[derive(Debug, thiserror::Error)]
pub enum RosterError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Flatten(#[from] FlattenError),
}

/// Wraps the store's user list into a `UserFlat` table.
pub fn extract_user_roster(store: &dyn ResourceStore) -> Result<FlatTable, RosterError> {
    Ok(user_roster(&store.list_users()?)?)
}
