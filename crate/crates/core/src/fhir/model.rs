use std::collections::{BTreeMap, HashSet};

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use super::ParseError;

pub const LOINC_SYSTEM: &str = "http://loinc.org";

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Coding {
    pub system: String,
    pub code: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub display: Option<String>,
}

impl Coding {
    pub fn new(system: impl Into<String>, code: impl Into<String>) -> Self {
        Self {
            system: system.into(),
            code: code.into(),
            display: None,
        }
    }

    pub fn with_display(mut self, display: impl Into<String>) -> Self {
        self.display = Some(display.into());
        self
    }

    pub fn is_loinc(&self) -> bool {
        self.system == LOINC_SYSTEM
    }

    pub(crate) fn validate(&self, path: &str) -> Result<(), ParseError> {
        if self.code.is_empty() {
            return Err(ParseError::schema(
                format!("{path}.code"),
                "must be non-empty",
            ));
        }
        if self.system.is_empty() {
            return Err(ParseError::schema(
                format!("{path}.system"),
                "must be non-empty when code is present",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quantity {
    pub value: f64,
    pub unit: String,
}

impl Quantity {
    pub fn new(value: f64, unit: impl Into<String>) -> Self {
        Self {
            value,
            unit: unit.into(),
        }
    }
}

/// A uniformly sampled signal in FHIR `SampledData` form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledData {
    pub origin: Quantity,
    /// Milliseconds between samples.
    pub period_ms: f64,
    pub factor: f64,
    pub dimensions: u32,
    pub data: String,
}

impl SampledData {
    pub(crate) fn validate(&self, path: &str) -> Result<(), ParseError> {
        if !self.origin.value.is_finite() {
            return Err(ParseError::schema(
                format!("{path}.origin.value"),
                "must be finite",
            ));
        }
        if !(self.period_ms.is_finite() && self.period_ms > 0.0) {
            return Err(ParseError::schema(format!("{path}.period"), "must be > 0"));
        }
        if !self.factor.is_finite() {
            return Err(ParseError::schema(
                format!("{path}.factor"),
                "must be finite",
            ));
        }
        if self.dimensions < 1 {
            return Err(ParseError::schema(
                format!("{path}.dimensions"),
                "must be >= 1",
            ));
        }
        if let Some((index, token)) = super::sampled::first_bad_token(&self.data) {
            return Err(ParseError::schema(
                format!("{path}.data"),
                format!("token {index} ({token:?}) is neither decimal nor E/L/U"),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ComponentValue {
    Quantity(Quantity),
    SampledData(SampledData),
    String(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub code: Vec<Coding>,
    pub value: ComponentValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub resource_id: String,
    pub subject_id: String,
    pub code: Vec<Coding>,
    pub effective_start: DateTime<Utc>,
    pub effective_end: Option<DateTime<Utc>>,
    pub value_quantity: Option<Quantity>,
    pub components: Vec<Component>,
    pub device: Option<Coding>,
    pub category: Option<Coding>,
}

impl Observation {
    /// First LOINC coding, falling back to the first coding of any system.
    pub fn primary_coding(&self) -> &Coding {
        self.code
            .iter()
            .find(|c| c.is_loinc())
            .unwrap_or(&self.code[0])
    }

    pub fn sampled_data(&self) -> Option<&SampledData> {
        self.components.iter().find_map(|c| match &c.value {
            ComponentValue::SampledData(sd) => Some(sd),
            _ => None,
        })
    }

    pub fn validate(&self) -> Result<(), ParseError> {
        if self.resource_id.is_empty() {
            return Err(ParseError::schema("id", "must be non-empty"));
        }
        if self.subject_id.is_empty() {
            return Err(ParseError::schema("subject.reference", "must be non-empty"));
        }
        if self.code.is_empty() {
            return Err(ParseError::schema(
                "code.coding",
                "needs at least one coding",
            ));
        }
        for (i, c) in self.code.iter().enumerate() {
            c.validate(&format!("code.coding[{i}]"))?;
        }
        if let Some(end) = self.effective_end {
            if end < self.effective_start {
                return Err(ParseError::schema(
                    "effectivePeriod.end",
                    "must not precede effectivePeriod.start",
                ));
            }
        }
        match (&self.value_quantity, self.components.is_empty()) {
            (Some(_), false) => {
                return Err(ParseError::schema(
                    "valueQuantity",
                    "observation carries both valueQuantity and components",
                ))
            }
            (None, true) => {
                return Err(ParseError::schema(
                    "valueQuantity",
                    "observation needs valueQuantity or at least one component",
                ))
            }
            _ => {}
        }
        if let Some(q) = &self.value_quantity {
            if !q.value.is_finite() {
                return Err(ParseError::schema("valueQuantity.value", "must be finite"));
            }
        }
        for (i, comp) in self.components.iter().enumerate() {
            let path = format!("component[{i}]");
            if comp.code.is_empty() {
                return Err(ParseError::schema(
                    format!("{path}.code.coding"),
                    "needs at least one coding",
                ));
            }
            for (j, c) in comp.code.iter().enumerate() {
                c.validate(&format!("{path}.code.coding[{j}]"))?;
            }
            match &comp.value {
                ComponentValue::Quantity(q) if !q.value.is_finite() => {
                    return Err(ParseError::schema(
                        format!("{path}.valueQuantity.value"),
                        "must be finite",
                    ))
                }
                ComponentValue::SampledData(sd) => {
                    sd.validate(&format!("{path}.valueSampledData"))?
                }
                _ => {}
            }
        }
        if let Some(d) = &self.device {
            d.validate("device.identifier")?;
        }
        if let Some(c) = &self.category {
            c.validate("category[0].coding[0]")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerItem {
    pub link_id: String,
    pub question_text: Option<String>,
    pub answer_code: String,
    pub answer_text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionnaireResponse {
    pub resource_id: String,
    pub subject_id: String,
    pub questionnaire_ref: String,
    pub authored: DateTime<Utc>,
    pub items: Vec<AnswerItem>,
}

impl QuestionnaireResponse {
    pub fn validate(&self) -> Result<(), ParseError> {
        if self.resource_id.is_empty() {
            return Err(ParseError::schema("id", "must be non-empty"));
        }
        if self.subject_id.is_empty() {
            return Err(ParseError::schema("subject.reference", "must be non-empty"));
        }
        let mut seen = HashSet::new();
        for (i, item) in self.items.iter().enumerate() {
            if item.link_id.is_empty() {
                return Err(ParseError::schema(
                    format!("item[{i}].linkId"),
                    "must be non-empty",
                ));
            }
            if !seen.insert(item.link_id.as_str()) {
                return Err(ParseError::schema(
                    format!("item[{i}].linkId"),
                    format!("duplicate linkId {:?}", item.link_id),
                ));
            }
            if item.answer_code.is_empty() {
                return Err(ParseError::schema(
                    format!("item[{i}].answer"),
                    "answer code must be non-empty",
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerOption {
    pub code: String,
    pub display: String,
    pub ordinal: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionDefinition {
    pub link_id: String,
    pub text: String,
    pub answer_options: Vec<AnswerOption>,
}

impl QuestionDefinition {
    pub fn option(&self, code: &str) -> Option<&AnswerOption> {
        self.answer_options.iter().find(|o| o.code == code)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionnaireDefinition {
    /// Canonical reference responses point at (the questionnaire `url`).
    pub questionnaire_ref: String,
    pub title: String,
    pub items: Vec<QuestionDefinition>,
}

impl QuestionnaireDefinition {
    pub fn item(&self, link_id: &str) -> Option<&QuestionDefinition> {
        self.items.iter().find(|i| i.link_id == link_id)
    }

    /// Whether `reference` (possibly carrying a `|version` suffix) points here.
    pub fn matches_ref(&self, reference: &str) -> bool {
        let bare = reference.split('|').next().unwrap_or(reference);
        bare == self.questionnaire_ref
    }

    pub fn validate(&self) -> Result<(), ParseError> {
        if self.questionnaire_ref.is_empty() {
            return Err(ParseError::schema("url", "must be non-empty"));
        }
        for (i, item) in self.items.iter().enumerate() {
            let mut displays: BTreeMap<&str, &str> = BTreeMap::new();
            for (j, opt) in item.answer_options.iter().enumerate() {
                if let Some(prev) = displays.insert(&opt.code, &opt.display) {
                    if prev != opt.display {
                        return Err(ParseError::schema(
                            format!("item[{i}].answerOption[{j}].valueCoding"),
                            format!("code {:?} maps to more than one display text", opt.code),
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub subject_id: String,
    pub birth_date: Option<NaiveDate>,
    pub demographics: BTreeMap<String, String>,
}

impl PatientRecord {
    pub fn new(subject_id: impl Into<String>) -> Self {
        Self {
            subject_id: subject_id.into(),
            birth_date: None,
            demographics: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<(), ParseError> {
        if self.subject_id.is_empty() {
            return Err(ParseError::schema("id", "must be non-empty"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ResourceKind {
    Observation,
    QuestionnaireResponse,
    Questionnaire,
    Patient,
}

impl ResourceKind {
    pub const ALL: [ResourceKind; 4] = [
        ResourceKind::Observation,
        ResourceKind::QuestionnaireResponse,
        ResourceKind::Questionnaire,
        ResourceKind::Patient,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ResourceKind::Observation => "Observation",
            ResourceKind::QuestionnaireResponse => "QuestionnaireResponse",
            ResourceKind::Questionnaire => "Questionnaire",
            ResourceKind::Patient => "Patient",
        }
    }

    pub fn from_resource_type(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Resource {
    Observation(Observation),
    QuestionnaireResponse(QuestionnaireResponse),
    Questionnaire(QuestionnaireDefinition),
    Patient(PatientRecord),
}

impl Resource {
    pub fn kind(&self) -> ResourceKind {
        match self {
            Resource::Observation(_) => ResourceKind::Observation,
            Resource::QuestionnaireResponse(_) => ResourceKind::QuestionnaireResponse,
            Resource::Questionnaire(_) => ResourceKind::Questionnaire,
            Resource::Patient(_) => ResourceKind::Patient,
        }
    }

    /// Identifier unique within the resource kind.
    pub fn resource_id(&self) -> &str {
        match self {
            Resource::Observation(o) => &o.resource_id,
            Resource::QuestionnaireResponse(r) => &r.resource_id,
            Resource::Questionnaire(q) => &q.questionnaire_ref,
            Resource::Patient(p) => &p.subject_id,
        }
    }

    /// Subject the resource belongs to; questionnaires have none.
    pub fn subject_id(&self) -> Option<&str> {
        match self {
            Resource::Observation(o) => Some(&o.subject_id),
            Resource::QuestionnaireResponse(r) => Some(&r.subject_id),
            Resource::Questionnaire(_) => None,
            Resource::Patient(p) => Some(&p.subject_id),
        }
    }

    /// Effective start for observations, authored time for responses.
    pub fn timestamp(&self) -> Option<DateTime<Utc>> {
        match self {
            Resource::Observation(o) => Some(o.effective_start),
            Resource::QuestionnaireResponse(r) => Some(r.authored),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), ParseError> {
        match self {
            Resource::Observation(o) => o.validate(),
            Resource::QuestionnaireResponse(r) => r.validate(),
            Resource::Questionnaire(q) => q.validate(),
            Resource::Patient(p) => p.validate(),
        }
    }
}

/// A validated resource together with the hash of its canonicalized source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceEnvelope {
    pub resource: Resource,
    pub raw_source_hash: String,
}

impl ResourceEnvelope {
    pub fn kind(&self) -> ResourceKind {
        self.resource.kind()
    }

    pub fn as_observation(&self) -> Option<&Observation> {
        match &self.resource {
            Resource::Observation(o) => Some(o),
            _ => None,
        }
    }

    pub fn as_questionnaire_response(&self) -> Option<&QuestionnaireResponse> {
        match &self.resource {
            Resource::QuestionnaireResponse(r) => Some(r),
            _ => None,
        }
    }

    pub fn as_questionnaire(&self) -> Option<&QuestionnaireDefinition> {
        match &self.resource {
            Resource::Questionnaire(q) => Some(q),
            _ => None,
        }
    }

    pub fn as_patient(&self) -> Option<&PatientRecord> {
        match &self.resource {
            Resource::Patient(p) => Some(p),
            _ => None,
        }
    }
}
