//! Validated in-memory subset of FHIR and the parsing layer in front of it.

mod model;
mod parse;
mod registry;
mod sampled;

use thiserror::Error;

pub use model::*;
pub use parse::{
    canonical_json, content_hash, parse_resource, parse_value, to_fhir_json, DEVICE_DISPLAY_SYSTEM,
    DEVICE_REFERENCE_SYSTEM,
};
pub use registry::{
    classify_observation, CodeRegistry, MetricKind, RegistryEntry, RegistryError, UnknownMetric,
};
pub use sampled::{decode_sampled_data, encode_samples, BadToken, SampledWaveform, SpecialToken};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("malformed JSON: {0}")]
    MalformedJson(String),
    #[error("unsupported resourceType {0:?}")]
    UnsupportedResourceType(String),
    #[error("schema violation at {path}: {message}")]
    SchemaViolation { path: String, message: String },
}

impl ParseError {
    pub(crate) fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        ParseError::SchemaViolation {
            path: path.into(),
            message: message.into(),
        }
    }
}
