use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_config, ProcessError};
use crate::fhir::MetricKind;
use crate::flatten::{FlatTable, ObservationRow, SchemaKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutlierMode {
    FixedRange,
    #[serde(rename = "IQR")]
    Iqr,
}

/// How [`filter_outliers`] decides which rows to drop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct OutlierPolicy {
    pub mode: OutlierMode,
    #[serde(default)]
    pub per_metric_ranges: BTreeMap<MetricKind, (f64, f64)>,
    #[serde(default = "default_multiplier")]
    pub iqr_multiplier: f64,
}

fn default_multiplier() -> f64 {
    1.5
}

impl Default for OutlierPolicy {
    /// Fixed ranges with a physiological heart-rate band of 30–220 bpm.
    fn default() -> Self {
        Self::identity().with_range(MetricKind::HeartRate, 30.0, 220.0)
    }
}

impl OutlierPolicy {
    /// Fixed-range mode with no ranges: keeps every row.
    pub fn identity() -> Self {
        Self {
            mode: OutlierMode::FixedRange,
            per_metric_ranges: BTreeMap::new(),
            iqr_multiplier: default_multiplier(),
        }
    }

    pub fn iqr(multiplier: f64) -> Self {
        Self {
            mode: OutlierMode::Iqr,
            per_metric_ranges: BTreeMap::new(),
            iqr_multiplier: multiplier,
        }
    }

    pub fn with_range(mut self, metric: MetricKind, min: f64, max: f64) -> Self {
        self.per_metric_ranges.insert(metric, (min, max));
        self
    }

    pub fn validate(&self) -> Result<(), ProcessError> {
        for (metric, (min, max)) in &self.per_metric_ranges {
            if !(min.is_finite() && max.is_finite() && min < max) {
                return Err(ProcessError::InvalidPolicy(format!(
                    "{metric}: range ({min}, {max}) needs finite min < max"
                )));
            }
        }
        if !(self.iqr_multiplier.is_finite() && self.iqr_multiplier > 0.0) {
            return Err(ProcessError::InvalidPolicy(format!(
                "iqrMultiplier must be positive, got {}",
                self.iqr_multiplier
            )));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, ProcessError> {
        let policy: Self =
            serde_json::from_str(text).map_err(|e| ProcessError::InvalidPolicy(e.to_string()))?;
        policy.validate()?;
        Ok(policy)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ProcessError> {
        let policy: Self = read_config(path.as_ref())?;
        policy.validate()?;
        Ok(policy)
    }
}

/// Quantile of sorted data by linear interpolation between closest ranks
/// (`h = (n - 1) p`). Panics on empty input.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Drops abnormal values from an `ObservationFlat` table. Returns the kept
/// rows in their original order and the number removed.
///
/// Fixed-range mode keeps `min <= value <= max` for configured metrics and
/// passes everything else. IQR mode computes fences per (metric, user).
pub fn filter_outliers(
    table: &FlatTable,
    policy: &OutlierPolicy,
) -> Result<(FlatTable, usize), ProcessError> {
    table.expect_schema(SchemaKind::ObservationFlat)?;
    policy.validate()?;
    let rows: Vec<ObservationRow> = table.typed_rows()?;

    let keep: Vec<bool> = match policy.mode {
        OutlierMode::FixedRange => rows
            .iter()
            .map(|r| {
                match policy
                    .per_metric_ranges
                    .get(&MetricKind::from_label(&r.quantity_name))
                {
                    Some(&(min, max)) => min <= r.value && r.value <= max,
                    None => true,
                }
            })
            .collect(),
        OutlierMode::Iqr => {
            let mut groups: HashMap<(&str, &str), Vec<f64>> = HashMap::new();
            for r in &rows {
                groups
                    .entry((&r.quantity_name, &r.user_id))
                    .or_default()
                    .push(r.value);
            }
            let k = policy.iqr_multiplier;
            let fences: HashMap<(&str, &str), (f64, f64)> = groups
                .into_iter()
                .map(|(key, mut values)| {
                    values.sort_by(f64::total_cmp);
                    let q1 = quantile(&values, 0.25);
                    let q3 = quantile(&values, 0.75);
                    let iqr = q3 - q1;
                    (key, (q1 - k * iqr, q3 + k * iqr))
                })
                .collect();
            rows.iter()
                .map(|r| {
                    let (lo, hi) = fences[&(r.quantity_name.as_str(), r.user_id.as_str())];
                    lo <= r.value && r.value <= hi
                })
                .collect()
        }
    };

    let mut i = 0;
    let kept = table.filter_rows(|_| {
        i += 1;
        keep[i - 1]
    });
    let removed = table.len() - kept.len();
    Ok((kept, removed))
}
