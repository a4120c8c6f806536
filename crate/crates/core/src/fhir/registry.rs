use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use super::model::{Coding, Observation};

/// Metric an observation measures, resolved through a [`CodeRegistry`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MetricKind {
    StepCount,
    HeartRate,
    Hrv,
    ActiveEnergy,
    Vo2Max,
    PhysicalEffort,
    Ecg,
    Other(String),
}

impl MetricKind {
    pub const KNOWN: [MetricKind; 7] = [
        MetricKind::StepCount,
        MetricKind::HeartRate,
        MetricKind::Hrv,
        MetricKind::ActiveEnergy,
        MetricKind::Vo2Max,
        MetricKind::PhysicalEffort,
        MetricKind::Ecg,
    ];

    /// Stable identifier used in config files and URLs.
    pub fn id(&self) -> String {
        match self {
            MetricKind::StepCount => "StepCount".into(),
            MetricKind::HeartRate => "HeartRate".into(),
            MetricKind::Hrv => "HRV".into(),
            MetricKind::ActiveEnergy => "ActiveEnergy".into(),
            MetricKind::Vo2Max => "VO2Max".into(),
            MetricKind::PhysicalEffort => "PhysicalEffort".into(),
            MetricKind::Ecg => "ECG".into(),
            MetricKind::Other(code) => format!("Other:{code}"),
        }
    }

    /// Human readable name, used as the `quantityName` of flattened rows.
    pub fn label(&self) -> &str {
        match self {
            MetricKind::StepCount => "Step Count",
            MetricKind::HeartRate => "Heart Rate",
            MetricKind::Hrv => "Heart Rate Variability",
            MetricKind::ActiveEnergy => "Active Energy",
            MetricKind::Vo2Max => "VO2 Max",
            MetricKind::PhysicalEffort => "Physical Effort",
            MetricKind::Ecg => "Electrocardiogram",
            MetricKind::Other(code) => code,
        }
    }

    /// Inverse of [`MetricKind::label`].
    pub fn from_label(label: &str) -> MetricKind {
        Self::KNOWN
            .into_iter()
            .find(|k| k.label() == label)
            .unwrap_or_else(|| MetricKind::Other(label.to_string()))
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown metric {0:?}")]
pub struct UnknownMetric(pub String);

fn normalize(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

impl FromStr for MetricKind {
    type Err = UnknownMetric;

    /// Accepts ids (`StepCount`, `HRV`), labels and kebab/snake spellings
    /// (`step-count`, `heart_rate`); `steps` is an alias for step count.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(code) = s.strip_prefix("Other:") {
            if !code.is_empty() {
                return Ok(MetricKind::Other(code.to_string()));
            }
        }
        let n = normalize(s);
        if n == "steps" {
            return Ok(MetricKind::StepCount);
        }
        Self::KNOWN
            .into_iter()
            .find(|k| normalize(&k.id()) == n || normalize(k.label()) == n)
            .ok_or_else(|| UnknownMetric(s.to_string()))
    }
}

impl Serialize for MetricKind {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.id())
    }
}

impl<'de> Deserialize<'de> for MetricKind {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RegistryEntry {
    pub system: String,
    pub code: String,
    pub metric_kind: MetricKind,
    pub display_name: String,
    pub unit: String,
}

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("cannot read registry file: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid registry file: {0}")]
    Format(#[from] serde_json::Error),
    #[error("registry maps ({system}, {code}) twice")]
    Duplicate { system: String, code: String },
}

const DEFAULT_REGISTRY: &str = include_str!("../../data/code_registry.json");

/// Maps `(system, code)` pairs to metric kinds.
#[derive(Debug, Clone)]
pub struct CodeRegistry {
    entries: Vec<RegistryEntry>,
    index: HashMap<(String, String), usize>,
}

impl CodeRegistry {
    pub fn from_entries(entries: Vec<RegistryEntry>) -> Result<Self, RegistryError> {
        let mut index = HashMap::new();
        for (i, e) in entries.iter().enumerate() {
            if index
                .insert((e.system.clone(), e.code.clone()), i)
                .is_some()
            {
                return Err(RegistryError::Duplicate {
                    system: e.system.clone(),
                    code: e.code.clone(),
                });
            }
        }
        Ok(Self { entries, index })
    }

    pub fn from_json(text: &str) -> Result<Self, RegistryError> {
        Self::from_entries(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RegistryError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn entries(&self) -> &[RegistryEntry] {
        &self.entries
    }

    pub fn lookup(&self, coding: &Coding) -> Option<&RegistryEntry> {
        self.index
            .get(&(coding.system.clone(), coding.code.clone()))
            .map(|&i| &self.entries[i])
    }

    /// First coding (in order) with a registry entry wins; otherwise the
    /// observation is `Other` with its first code.
    pub fn classify(&self, obs: &Observation) -> MetricKind {
        self.classify_codings(&obs.code)
    }

    pub fn classify_codings(&self, codings: &[Coding]) -> MetricKind {
        codings
            .iter()
            .find_map(|c| self.lookup(c))
            .map(|e| e.metric_kind.clone())
            .unwrap_or_else(|| {
                MetricKind::Other(codings.first().map(|c| c.code.clone()).unwrap_or_default())
            })
    }

    /// All codings registered for `kind`.
    pub fn codings_for(&self, kind: &MetricKind) -> Vec<Coding> {
        self.entries
            .iter()
            .filter(|e| &e.metric_kind == kind)
            .map(|e| Coding::new(&e.system, &e.code).with_display(&e.display_name))
            .collect()
    }
}

impl Default for CodeRegistry {
    fn default() -> Self {
        Self::from_json(DEFAULT_REGISTRY).expect("bundled registry is valid")
    }
}

/// Free-function form of [`CodeRegistry::classify`].
pub fn classify_observation(obs: &Observation, registry: &CodeRegistry) -> MetricKind {
    registry.classify(obs)
}
