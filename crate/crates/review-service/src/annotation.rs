//! Clinician annotations and their append-only log.
//!
//! The log is one JSON object per line. Records are never rewritten; the
//! in-memory view is rebuilt by replaying the file on open.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const LOG_FILE: &str = "annotations.ndjson";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Diagnosis {
    NormalSinusRhythm,
    SinusTachycardia,
    #[serde(rename = "SVT")]
    Svt,
    #[serde(rename = "EAT")]
    Eat,
    #[serde(rename = "AF")]
    Af,
    #[serde(rename = "VT")]
    Vt,
    HeartBlock,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Quality {
    Uninterpretable,
    PoorQuality,
    Adequate,
    Good,
    Excellent,
}

/// Request body of an annotation POST.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AnnotationInput {
    pub reviewer_initials: String,
    pub diagnosis: Diagnosis,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnosis_other_text: Option<String>,
    pub quality: Quality,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
}

impl AnnotationInput {
    /// Violated invariants, empty when the input is acceptable.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let initials = &self.reviewer_initials;
        if !(2..=4).contains(&initials.chars().count())
            || !initials.chars().all(|c| c.is_ascii_uppercase())
        {
            out.push(format!(
                "reviewerInitials must be 2 to 4 uppercase letters, got {initials:?}"
            ));
        }
        let has_text = self
            .diagnosis_other_text
            .as_deref()
            .is_some_and(|t| !t.trim().is_empty());
        match (self.diagnosis, has_text) {
            (Diagnosis::Other, false) => {
                out.push("diagnosisOtherText is required when diagnosis is Other".into())
            }
            (d, true) if d != Diagnosis::Other => {
                out.push("diagnosisOtherText is only allowed when diagnosis is Other".into())
            }
            _ => {}
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AnnotationRecord {
    pub recording_resource_id: String,
    #[serde(flatten)]
    pub input: AnnotationInput,
    pub annotated_at: DateTime<Utc>,
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("annotation log {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("annotation log {path} line {line}: {source}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

/// Append-only, fsync'd annotation log with an in-memory replay.
#[derive(Debug)]
pub struct AnnotationLog {
    path: PathBuf,
    writer: Mutex<File>,
    records: RwLock<Vec<AnnotationRecord>>,
}

impl AnnotationLog {
    /// Opens or creates the log. An unterminated final line left by a crash
    /// mid-write is cut off; any other malformed line is an error.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, LogError> {
        let path = path.as_ref().to_path_buf();
        let io = |source| LogError::Io {
            path: path.clone(),
            source,
        };
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(io(e)),
        };
        let complete = text.rfind('\n').map_or(0, |i| i + 1);
        let mut records = Vec::new();
        for (i, line) in text[..complete].lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record = serde_json::from_str(line).map_err(|source| LogError::Corrupt {
                path: path.clone(),
                line: i + 1,
                source,
            })?;
            records.push(record);
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io)?;
        if complete < text.len() {
            tracing::warn!(path = %path.display(), "dropping unterminated final annotation line");
            file.set_len(complete as u64).map_err(io)?;
            file.sync_data().map_err(io)?;
        }
        Ok(Self {
            path,
            writer: Mutex::new(file),
            records: RwLock::new(records),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Appends a record and syncs it to disk before returning. Concurrent
    /// appends are serialized.
    pub fn append(&self, record: AnnotationRecord) -> Result<AnnotationRecord, LogError> {
        let mut line = serde_json::to_vec(&record).expect("annotation serializes");
        line.push(b'\n');
        let mut file = self.writer.lock();
        let io = |source| LogError::Io {
            path: self.path.clone(),
            source,
        };
        file.write_all(&line).map_err(io)?;
        file.sync_data().map_err(io)?;
        self.records.write().push(record.clone());
        Ok(record)
    }

    /// Annotations of one recording, newest first.
    pub fn for_recording(&self, resource_id: &str) -> Vec<AnnotationRecord> {
        self.records
            .read()
            .iter()
            .rev()
            .filter(|r| r.recording_resource_id == resource_id)
            .cloned()
            .collect()
    }

    pub fn latest(&self, resource_id: &str) -> Option<AnnotationRecord> {
        self.records
            .read()
            .iter()
            .rev()
            .find(|r| r.recording_resource_id == resource_id)
            .cloned()
    }

    /// Newest annotation of every annotated recording.
    pub fn latest_by_recording(&self) -> HashMap<String, AnnotationRecord> {
        let mut out = HashMap::new();
        for r in self.records.read().iter() {
            out.insert(r.recording_resource_id.clone(), r.clone());
        }
        out
    }

    pub fn all(&self) -> Vec<AnnotationRecord> {
        self.records.read().clone()
    }

    pub fn len(&self) -> usize {
        self.records.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(diagnosis: Diagnosis, other: Option<&str>, initials: &str) -> AnnotationInput {
        AnnotationInput {
            reviewer_initials: initials.into(),
            diagnosis,
            diagnosis_other_text: other.map(str::to_string),
            quality: Quality::Good,
            notes: None,
        }
    }

    #[test]
    fn invariants() {
        assert!(input(Diagnosis::Svt, None, "JD").violations().is_empty());
        assert!(input(Diagnosis::Other, Some("Bigeminy"), "ABCD")
            .violations()
            .is_empty());
        assert_eq!(input(Diagnosis::Other, None, "JD").violations().len(), 1);
        assert_eq!(
            input(Diagnosis::Other, Some("  "), "JD").violations().len(),
            1
        );
        assert_eq!(input(Diagnosis::Af, Some("x"), "JD").violations().len(), 1);
        for bad in ["J", "jd", "ABCDE", "J1", ""] {
            assert_eq!(
                input(Diagnosis::Af, None, bad).violations().len(),
                1,
                "{bad}"
            );
        }
    }

    #[test]
    fn wire_names() {
        let json = serde_json::to_value(input(Diagnosis::Svt, None, "JD")).unwrap();
        assert_eq!(json["diagnosis"], "SVT");
        assert_eq!(json["reviewerInitials"], "JD");
        let q: Quality = serde_json::from_str("\"PoorQuality\"").unwrap();
        assert_eq!(q, Quality::PoorQuality);
        assert!(serde_json::from_str::<Diagnosis>("\"Svt\"").is_err());
    }

    #[test]
    fn append_and_replay() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(LOG_FILE);
        let log = AnnotationLog::open(&path).unwrap();
        for (i, initials) in ["AB", "CD"].into_iter().enumerate() {
            log.append(AnnotationRecord {
                recording_resource_id: "ecg-1".into(),
                input: input(Diagnosis::Svt, None, initials),
                annotated_at: DateTime::from_timestamp(1_700_000_000 + i as i64, 0).unwrap(),
            })
            .unwrap();
        }
        drop(log);
        let log = AnnotationLog::open(&path).unwrap();
        let got = log.for_recording("ecg-1");
        assert_eq!(got.len(), 2);
        assert_eq!(got[0].input.reviewer_initials, "CD");
        assert!(log.for_recording("ecg-2").is_empty());
    }

    #[test]
    fn torn_tail_is_skipped_but_corruption_is_not() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(LOG_FILE);
        let good = serde_json::to_string(&AnnotationRecord {
            recording_resource_id: "e".into(),
            input: input(Diagnosis::Vt, None, "AB"),
            annotated_at: Utc::now(),
        })
        .unwrap();
        std::fs::write(&path, format!("{good}\n{{\"recordingRes")).unwrap();
        let log = AnnotationLog::open(&path).unwrap();
        assert_eq!(log.len(), 1);
        log.append(serde_json::from_str(&good).unwrap()).unwrap();
        drop(log);
        assert_eq!(AnnotationLog::open(&path).unwrap().len(), 2);
        std::fs::write(&path, format!("not json\n{good}\n")).unwrap();
        assert!(matches!(
            AnnotationLog::open(&path),
            Err(LogError::Corrupt { line: 1, .. })
        ));
    }
}
