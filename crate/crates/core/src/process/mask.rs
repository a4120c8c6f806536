use std::collections::BTreeMap;
use std::fmt;

use hmac::{Hmac, KeyInit, Mac};
use serde_json::Value;
use sha2::Sha256;

use super::ProcessError;
use crate::flatten::{Cell, FlatTable};

pub const MASK_KEY_ENV: &str = "FHIRFLOW_MASK_KEY";
const PSEUDONYM_LEN: usize = 10;
const MIN_KEY_LEN: usize = 16;
const MASKED_COLUMNS: [&str; 2] = ["userId", "resourceId"];

/// Secret for keyed pseudonyms. Never printed.
#[derive(Clone, PartialEq, Eq)]
pub struct MaskKey(Vec<u8>);

impl MaskKey {
    pub fn new(secret: impl Into<Vec<u8>>) -> Result<Self, ProcessError> {
        let secret = secret.into();
        if secret.len() < MIN_KEY_LEN {
            return Err(ProcessError::WeakKey(secret.len()));
        }
        Ok(Self(secret))
    }

    pub fn from_hex(text: &str) -> Result<Self, ProcessError> {
        Self::new(hex::decode(text.trim()).map_err(|_| ProcessError::BadKeyHex)?)
    }

    /// Reads the hex key from `FHIRFLOW_MASK_KEY`.
    pub fn from_env() -> Result<Self, ProcessError> {
        match std::env::var(MASK_KEY_ENV) {
            Ok(v) if !v.trim().is_empty() => Self::from_hex(&v),
            _ => Err(ProcessError::MissingKey),
        }
    }

    fn digest(&self, id: &str) -> [u8; 32] {
        let mut mac = Hmac::<Sha256>::new_from_slice(&self.0).expect("HMAC takes any key length");
        mac.update(id.as_bytes());
        mac.finalize().into_bytes().into()
    }
}

impl fmt::Debug for MaskKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MaskKey(<{} bytes>)", self.0.len())
    }
}

/// First 10 hex characters of HMAC-SHA256(key, id).
pub fn pseudonym(key: &MaskKey, id: &str) -> String {
    let mut hex = hex::encode(key.digest(id));
    hex.truncate(PSEUDONYM_LEN);
    hex
}

/// Replaces `userId` and `resourceId` cells with keyed pseudonyms. Every
/// other cell, the row order and the schema are unchanged. Provenance
/// entries holding JSON objects keyed by id, or JSON arrays of ids, are
/// re-keyed with the same pseudonyms.
pub fn mask_identifiers(table: &FlatTable, key: &MaskKey) -> Result<FlatTable, ProcessError> {
    Ok(mask_identifiers_with_audit(table, key)?.0)
}

struct Masker<'k> {
    key: &'k MaskKey,
    audit: BTreeMap<String, String>,
    cache: BTreeMap<String, String>,
}

impl Masker<'_> {
    fn mask(&mut self, id: &str) -> Result<String, ProcessError> {
        if let Some(p) = self.cache.get(id) {
            return Ok(p.clone());
        }
        let full = hex::encode(self.key.digest(id));
        let short = full[..PSEUDONYM_LEN].to_string();
        if let Some(prev) = self.audit.insert(short.clone(), full.clone()) {
            if prev != full {
                return Err(ProcessError::MaskCollision(short));
            }
        }
        self.cache.insert(id.to_string(), short.clone());
        Ok(short)
    }

    fn mask_provenance(&mut self, value: &str) -> Result<Option<String>, ProcessError> {
        let masked = match serde_json::from_str::<Value>(value) {
            Ok(Value::Object(map)) => {
                let mut out = serde_json::Map::new();
                for (k, v) in map {
                    out.insert(self.mask(&k)?, v);
                }
                Value::Object(out)
            }
            Ok(Value::Array(items)) if items.iter().all(Value::is_string) => Value::Array(
                items
                    .iter()
                    .map(|v| self.mask(v.as_str().unwrap_or_default()).map(Value::String))
                    .collect::<Result<_, _>>()?,
            ),
            _ => return Ok(None),
        };
        Ok(Some(masked.to_string()))
    }
}

/// [`mask_identifiers`] plus an audit map from each pseudonym to the full
/// 64-hex digest it was cut from. Fails if two distinct ids share a
/// pseudonym.
pub fn mask_identifiers_with_audit(
    table: &FlatTable,
    key: &MaskKey,
) -> Result<(FlatTable, BTreeMap<String, String>), ProcessError> {
    let columns: Vec<usize> = MASKED_COLUMNS
        .iter()
        .filter_map(|c| table.column_index(c))
        .collect();
    let mut masker = Masker {
        key,
        audit: BTreeMap::new(),
        cache: BTreeMap::new(),
    };
    let mut out = table.empty_like();
    for row in table.rows() {
        let mut row = row.clone();
        for &i in &columns {
            let Some(id) = row[i].as_text() else { continue };
            row[i] = Cell::Text(masker.mask(id)?);
        }
        out.push_row(row)?;
    }
    for (k, v) in table.provenance() {
        if let Some(masked) = masker.mask_provenance(v)? {
            out.set_provenance(k.clone(), masked);
        }
    }
    out.set_provenance("maskedColumns", MASKED_COLUMNS.join(","));
    Ok((out, masker.audit))
}
