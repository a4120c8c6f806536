use serde::{Deserialize, Serialize};

use super::ExploreError;
use crate::fhir::canonical_json;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ChartKind {
    Line,
    Bar,
    Scatter,
    EcgTrace,
    Histogram,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Axis {
    pub label: String,
    pub unit: String,
}

impl Axis {
    pub fn new(label: impl Into<String>, unit: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            unit: unit.into(),
        }
    }
}

/// Position on the x axis: a number, or a category such as a date or user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum XValue {
    Number(f64),
    Text(String),
}

/// A data point. `y` is null where the source has a missing sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: XValue,
    pub y: Option<f64>,
}

impl Point {
    pub fn number(x: f64, y: Option<f64>) -> Self {
        Self {
            x: XValue::Number(x),
            y,
        }
    }

    pub fn category(x: impl Into<String>, y: f64) -> Self {
        Self {
            x: XValue::Text(x.into()),
            y: Some(y),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub points: Vec<Point>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub label: String,
    pub text: String,
}

/// Renderer-independent chart description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ChartSpec {
    pub kind: ChartKind,
    pub title: String,
    pub x_axis: Axis,
    pub y_axis: Axis,
    pub series: Vec<Series>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub annotations: Vec<Annotation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling_frequency_hz: Option<f64>,
}

impl ChartSpec {
    pub fn new(kind: ChartKind, title: impl Into<String>, x_axis: Axis, y_axis: Axis) -> Self {
        Self {
            kind,
            title: title.into(),
            x_axis,
            y_axis,
            series: Vec::new(),
            annotations: Vec::new(),
            sampling_frequency_hz: None,
        }
    }

    pub fn point_count(&self) -> usize {
        self.series.iter().map(|s| s.points.len()).sum()
    }

    /// At least one series, finite coordinates, and a positive sampling
    /// frequency on ECG traces.
    pub fn validate(&self) -> Result<(), ExploreError> {
        if self.series.is_empty() {
            return Err(ExploreError::EmptySpec);
        }
        for s in &self.series {
            for p in &s.points {
                let x_ok = match &p.x {
                    XValue::Number(x) => x.is_finite(),
                    XValue::Text(_) => true,
                };
                if !x_ok || p.y.is_some_and(|y| !y.is_finite()) {
                    return Err(ExploreError::InvalidSpec(format!(
                        "series {:?} has a non-finite point",
                        s.name
                    )));
                }
            }
        }
        if self.kind == ChartKind::EcgTrace
            && !self
                .sampling_frequency_hz
                .is_some_and(|f| f > 0.0 && f.is_finite())
        {
            return Err(ExploreError::InvalidSpec(
                "ecgTrace needs a positive samplingFrequencyHz".into(),
            ));
        }
        Ok(())
    }

    /// Canonical JSON: object keys sorted, no insignificant whitespace.
    pub fn to_canonical_json(&self) -> String {
        canonical_json(&serde_json::to_value(self).expect("chart spec serializes"))
    }

    pub fn from_json(text: &str) -> Result<Self, ExploreError> {
        let spec: Self =
            serde_json::from_str(text).map_err(|e| ExploreError::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line() -> ChartSpec {
        let mut spec = ChartSpec::new(
            ChartKind::Line,
            "t",
            Axis::new("Date", ""),
            Axis::new("Steps", "steps"),
        );
        spec.series.push(Series {
            name: "a".into(),
            points: vec![
                Point::category("2024-01-01", 1.0),
                Point::category("2024-01-02", 2.5),
            ],
        });
        spec.series.push(Series {
            name: "b".into(),
            points: vec![Point::number(0.5, None)],
        });
        spec
    }

    #[test]
    fn json_shape() {
        let json = line().to_canonical_json();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["kind"], "line");
        assert_eq!(v["series"].as_array().unwrap().len(), 2);
        assert_eq!(v["series"][1]["points"][0]["y"], serde_json::Value::Null);
        assert_eq!(v["xAxis"]["label"], "Date");
        assert!(v.get("annotations").is_none());
        assert!(json.starts_with(r#"{"kind":"line","series":"#));
    }

    #[test]
    fn json_is_byte_stable() {
        let once = line().to_canonical_json();
        let twice = ChartSpec::from_json(&once).unwrap().to_canonical_json();
        assert_eq!(once, twice);
    }

    #[test]
    fn validation() {
        let mut s = line();
        s.series[0].points[0].y = Some(f64::NAN);
        assert!(matches!(s.validate(), Err(ExploreError::InvalidSpec(_))));
        s.series.clear();
        assert!(matches!(s.validate(), Err(ExploreError::EmptySpec)));
        let mut e = line();
        e.kind = ChartKind::EcgTrace;
        assert!(e.validate().is_err());
        e.sampling_frequency_hz = Some(512.0);
        assert!(e.validate().is_ok());
    }
}
