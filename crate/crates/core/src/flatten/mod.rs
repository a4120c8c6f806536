//! Hierarchical resources to schema-tagged flat tables.

mod observation;
mod questionnaire;
mod study;
mod table;

use thiserror::Error;

use crate::fhir::BadToken;

pub use observation::{flatten_ecg, flatten_observations, partition_observations};
pub use questionnaire::{
    extract_user_roster, flatten_questionnaire_responses, user_roster, QuestionnaireReport,
    RosterError, UnresolvedText,
};
pub use study::{collect_patients, StudyTables};
pub use table::{
    Cell, Column, ColumnType, EcgRow, FlatTable, ObservationRow, QuestionnaireRow, SchemaKind,
    TableError, TableRow,
};

#[derive(Debug, Error)]
pub enum FlattenError {
    #[error("observation {resource_id} is an ECG recording; flatten it with flatten_ecg")]
    MixedKind { resource_id: String },
    #[error("observation {resource_id} has no valueQuantity")]
    MissingValue { resource_id: String },
    #[error("observation {resource_id}: {source}")]
    BadToken {
        resource_id: String,
        #[source]
        source: BadToken,
    },
    #[error(transparent)]
    Table(#[from] TableError),
}
