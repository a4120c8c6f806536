//! Toolkit for working with FHIR-encoded digital health data.
//!
//! The crate is organised as a pipeline:
//!
//! * [`fhir`] parses and validates the supported resource subset (observations,
//!   ECG recordings, questionnaire responses, questionnaires and patients).
//! * [`store`] persists resources and answers partial-download queries.
//! * [`flatten`] turns resources into schema-tagged [`FlatTable`]s.
//! * [`process`] filters, selects, aggregates, scores and pseudonymizes tables.
//! * [`explore`] builds chart specifications and study summaries, renders SVG,
//!   and exports tables (CSV) and charts (JSON).
//!
//! [`synth`] generates deterministic synthetic corpora used by the examples and
//! the test suites.

pub mod explore;
pub mod fhir;
pub mod flatten;
pub mod process;
pub mod store;
pub mod synth;

mod time;

pub use fhir::{
    parse_resource, CodeRegistry, Coding, MetricKind, Observation, ParseError, PatientRecord,
    QuestionnaireDefinition, QuestionnaireResponse, Resource, ResourceEnvelope, ResourceKind,
    SampledWaveform,
};
pub use flatten::{Cell, ColumnType, FlatTable, SchemaKind};
pub use store::{FsStore, IngestReport, ResourceStore, StoreQuery};
