use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::model::SampledData;

/// FHIR `SampledData` tokens that mark a sample as present but unusable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpecialToken {
    /// `E`: error, no valid value.
    Error,
    /// `L`: below the detection limit.
    BelowLimit,
    /// `U`: above the detection limit.
    AboveLimit,
}

impl SpecialToken {
    pub fn parse(token: &str) -> Option<Self> {
        match token {
            "E" => Some(SpecialToken::Error),
            "L" => Some(SpecialToken::BelowLimit),
            "U" => Some(SpecialToken::AboveLimit),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SpecialToken::Error => "E",
            SpecialToken::BelowLimit => "L",
            SpecialToken::AboveLimit => "U",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("bad SampledData token {token:?} at index {index}")]
pub struct BadToken {
    pub index: usize,
    pub token: String,
}

/// Decoded signal. `None` samples came from `E`/`L`/`U` tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledWaveform {
    pub samples: Vec<Option<f64>>,
    pub sampling_frequency_hz: f64,
    pub unit: String,
    /// Which special token produced each missing sample, by index.
    pub markers: BTreeMap<usize, SpecialToken>,
}

impl SampledWaveform {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sampling_frequency_hz
    }
}

fn is_decimal_token(token: &str) -> bool {
    // FHIR decimal: optional sign, digits, optional fraction, optional exponent.
    let bytes = token.as_bytes();
    let mut i = 0;
    if i < bytes.len() && (bytes[i] == b'-' || bytes[i] == b'+') {
        i += 1;
    }
    let int_start = i;
    while i < bytes.len() && bytes[i].is_ascii_digit() {
        i += 1;
    }
    if i == int_start {
        return false;
    }
    if i < bytes.len() && bytes[i] == b'.' {
        i += 1;
        let frac_start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        if i == frac_start {
            return false;
        }
    }
    if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
        i += 1;
        if i < bytes.len() && (bytes[i] == b'-' || bytes[i] == b'+') {
            i += 1;
        }
        let exp_start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        if i == exp_start {
            return false;
        }
    }
    i == bytes.len()
}

pub(crate) fn first_bad_token(data: &str) -> Option<(usize, &str)> {
    data.split_whitespace()
        .enumerate()
        .find(|(_, t)| SpecialToken::parse(t).is_none() && !is_decimal_token(t))
}

/// Decodes a `SampledData` token string into physical values.
///
/// Each numeric token `t` becomes `origin + factor * t`.
pub fn decode_sampled_data(sd: &SampledData) -> Result<SampledWaveform, BadToken> {
    let mut samples = Vec::new();
    let mut markers = BTreeMap::new();
    for (index, token) in sd.data.split_whitespace().enumerate() {
        if let Some(special) = SpecialToken::parse(token) {
            markers.insert(index, special);
            samples.push(None);
            continue;
        }
        if !is_decimal_token(token) {
            return Err(BadToken {
                index,
                token: token.to_string(),
            });
        }
        let raw: f64 = token.parse().map_err(|_| BadToken {
            index,
            token: token.to_string(),
        })?;
        samples.push(Some(sd.origin.value + sd.factor * raw));
    }
    Ok(SampledWaveform {
        samples,
        sampling_frequency_hz: 1000.0 / sd.period_ms,
        unit: sd.origin.unit.clone(),
        markers,
    })
}

/// Inverse of [`decode_sampled_data`]: renders samples back into a token string.
///
/// Missing samples use their recorded marker, `E` when none was recorded.
pub fn encode_samples(waveform: &SampledWaveform, origin: f64, factor: f64) -> String {
    let mut out = String::new();
    for (i, sample) in waveform.samples.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        match sample {
            Some(v) => {
                let raw = if factor == 0.0 {
                    0.0
                } else {
                    (v - origin) / factor
                };
                out.push_str(&raw.to_string());
            }
            None => out.push_str(
                waveform
                    .markers
                    .get(&i)
                    .copied()
                    .unwrap_or(SpecialToken::Error)
                    .as_str(),
            ),
        }
    }
    out
}
