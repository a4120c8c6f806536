use std::collections::BTreeSet;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::fhir::{CodeRegistry, MetricKind, Resource, ResourceEnvelope, ResourceKind};

/// Partial-download filter. Every present field must match (conjunction);
/// an all-absent query selects everything.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StoreQuery {
    pub metric_kinds: Option<BTreeSet<MetricKind>>,
    pub codes: Option<BTreeSet<(String, String)>>,
    pub subject_ids: Option<BTreeSet<String>>,
    pub date_from: Option<DateTime<Utc>>,
    pub date_to: Option<DateTime<Utc>>,
    pub resource_kinds: Option<BTreeSet<ResourceKind>>,
}

impl StoreQuery {
    pub fn all() -> Self {
        Self::default()
    }

    pub fn kinds(kinds: impl IntoIterator<Item = ResourceKind>) -> Self {
        Self {
            resource_kinds: Some(kinds.into_iter().collect()),
            ..Self::default()
        }
    }

    pub fn with_subjects<S: Into<String>>(mut self, ids: impl IntoIterator<Item = S>) -> Self {
        self.subject_ids = Some(ids.into_iter().map(Into::into).collect());
        self
    }

    pub fn with_metrics(mut self, kinds: impl IntoIterator<Item = MetricKind>) -> Self {
        self.metric_kinds = Some(kinds.into_iter().collect());
        self
    }

    pub fn with_codes<S: Into<String>>(mut self, codes: impl IntoIterator<Item = (S, S)>) -> Self {
        self.codes = Some(
            codes
                .into_iter()
                .map(|(s, c)| (s.into(), c.into()))
                .collect(),
        );
        self
    }

    pub fn between(mut self, from: Option<DateTime<Utc>>, to: Option<DateTime<Utc>>) -> Self {
        self.date_from = from;
        self.date_to = to;
        self
    }

    pub fn is_valid(&self) -> bool {
        match (self.date_from, self.date_to) {
            (Some(from), Some(to)) => from <= to,
            _ => true,
        }
    }

    /// Filters answerable from index metadata alone.
    pub(crate) fn matches_indexed(
        &self,
        kind: ResourceKind,
        subject: Option<&str>,
        codes: &[(String, String)],
        timestamp: Option<DateTime<Utc>>,
    ) -> bool {
        if let Some(kinds) = &self.resource_kinds {
            if !kinds.contains(&kind) {
                return false;
            }
        }
        if let Some(ids) = &self.subject_ids {
            match subject {
                Some(s) if ids.contains(s) => {}
                _ => return false,
            }
        }
        if let Some(wanted) = &self.codes {
            if !codes.iter().any(|c| wanted.contains(c)) {
                return false;
            }
        }
        if self.date_from.is_some() || self.date_to.is_some() {
            let Some(ts) = timestamp else {
                return false;
            };
            if self.date_from.is_some_and(|from| ts < from) {
                return false;
            }
            if self.date_to.is_some_and(|to| ts > to) {
                return false;
            }
        }
        true
    }

    /// Full predicate over a parsed envelope.
    pub fn matches(&self, env: &ResourceEnvelope, registry: &CodeRegistry) -> bool {
        let resource = &env.resource;
        let codes = index_codes(resource);
        if !self.matches_indexed(
            resource.kind(),
            resource.subject_id(),
            &codes,
            resource.timestamp(),
        ) {
            return false;
        }
        if let Some(metrics) = &self.metric_kinds {
            match resource {
                Resource::Observation(o) => metrics.contains(&registry.classify(o)),
                _ => false,
            }
        } else {
            true
        }
    }
}

pub(crate) fn index_codes(resource: &Resource) -> Vec<(String, String)> {
    match resource {
        Resource::Observation(o) => o
            .code
            .iter()
            .map(|c| (c.system.clone(), c.code.clone()))
            .collect(),
        _ => Vec::new(),
    }
}
