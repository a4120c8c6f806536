use std::collections::hash_map::Entry;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::query::{index_codes, StoreQuery};
use super::{IngestReport, Rejection, ResourceStore, StoreError};
use crate::fhir::{
    canonical_json, parse_value, CodeRegistry, PatientRecord, ResourceEnvelope, ResourceKind,
};

const INDEX_FILE: &str = "index.json";
const INDEX_VERSION: u32 = 1;

fn data_file(kind: ResourceKind) -> &'static str {
    match kind {
        ResourceKind::Observation => "observations.ndjson",
        ResourceKind::QuestionnaireResponse => "questionnaire_responses.ndjson",
        ResourceKind::Questionnaire => "questionnaires.ndjson",
        ResourceKind::Patient => "patients.ndjson",
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct IndexEntry {
    kind: ResourceKind,
    offset: u64,
    len: u64,
    hash: String,
    resource_id: String,
    subject_id: Option<String>,
    codes: Vec<(String, String)>,
    timestamp: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct StoreIndex {
    version: u32,
    entries: Vec<IndexEntry>,
}

/// Filesystem-backed store rooted at one directory.
///
/// Data files are append-only; the index is replaced atomically after each
/// append, so a reader that loads it once sees a consistent snapshot.
#[derive(Debug)]
pub struct FsStore {
    root: PathBuf,
    registry: CodeRegistry,
    writer: Mutex<()>,
}

impl FsStore {
    /// Creates the directory (if needed) and an empty index.
    pub fn init(root: impl AsRef<Path>) -> Result<Self, StoreError> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root).map_err(|e| StoreError::io(&root, e))?;
        let store = Self::with_root(root, CodeRegistry::default());
        if !store.index_path().exists() {
            store.reindex()?;
        }
        Ok(store)
    }

    /// Opens an existing store. A missing index is rebuilt from data files.
    pub fn open(root: impl AsRef<Path>) -> Result<Self, StoreError> {
        Self::open_with_registry(root, CodeRegistry::default())
    }

    pub fn open_with_registry(
        root: impl AsRef<Path>,
        registry: CodeRegistry,
    ) -> Result<Self, StoreError> {
        let root = root.as_ref().to_path_buf();
        if !root.is_dir() {
            return Err(StoreError::NotFound(root));
        }
        let store = Self::with_root(root, registry);
        if !store.index_path().exists() {
            store.reindex()?;
        }
        Ok(store)
    }

    fn with_root(root: PathBuf, registry: CodeRegistry) -> Self {
        Self {
            root,
            registry,
            writer: Mutex::new(()),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn registry(&self) -> &CodeRegistry {
        &self.registry
    }

    fn index_path(&self) -> PathBuf {
        self.root.join(INDEX_FILE)
    }

    fn data_path(&self, kind: ResourceKind) -> PathBuf {
        self.root.join(data_file(kind))
    }

    fn load_index(&self) -> Result<StoreIndex, StoreError> {
        let path = self.index_path();
        let text = fs::read_to_string(&path).map_err(|e| StoreError::io(&path, e))?;
        let index: StoreIndex =
            serde_json::from_str(&text).map_err(|e| StoreError::CorruptIndex {
                path: path.clone(),
                message: e.to_string(),
            })?;
        if index.version != INDEX_VERSION {
            return Err(StoreError::CorruptIndex {
                path,
                message: format!("unsupported index version {}", index.version),
            });
        }
        Ok(index)
    }

    fn write_index(&self, index: &StoreIndex) -> Result<(), StoreError> {
        let path = self.index_path();
        let tmp = self.root.join(format!("{INDEX_FILE}.tmp"));
        let bytes = serde_json::to_vec(index).expect("index serializes");
        let mut f = File::create(&tmp).map_err(|e| StoreError::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| StoreError::io(&tmp, e))?;
        f.sync_all().map_err(|e| StoreError::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| StoreError::io(&path, e))
    }

    /// Rebuilds the sidecar index by scanning every data file.
    pub fn reindex(&self) -> Result<usize, StoreError> {
        let _guard = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        let mut index = StoreIndex {
            version: INDEX_VERSION,
            entries: Vec::new(),
        };
        for kind in ResourceKind::ALL {
            let path = self.data_path(kind);
            if !path.exists() {
                continue;
            }
            let bytes = fs::read(&path).map_err(|e| StoreError::io(&path, e))?;
            let mut offset = 0u64;
            for (lineno, line) in bytes.split(|&b| b == b'\n').enumerate() {
                let len = line.len() as u64;
                if !line.iter().all(u8::is_ascii_whitespace) {
                    let location = format!("{}:{}", path.display(), lineno + 1);
                    let env = std::str::from_utf8(line)
                        .map_err(|e| e.to_string())
                        .and_then(|s| serde_json::from_str::<Value>(s).map_err(|e| e.to_string()))
                        .and_then(|v| parse_value(&v).map_err(|e| e.to_string()))
                        .map_err(|message| StoreError::CorruptData { location, message })?;
                    index.entries.push(entry_for(&env, offset, len));
                }
                offset += len + 1;
            }
        }
        self.write_index(&index)?;
        Ok(index.entries.len())
    }

    /// Ingests in-memory documents; `location` labels rejections.
    pub fn ingest_documents<'a>(
        &self,
        docs: impl IntoIterator<Item = (String, &'a str)>,
    ) -> Result<IngestReport, StoreError> {
        let mut report = IngestReport::default();
        let mut parsed = Vec::new();
        for (location, text) in docs {
            expand_document(&location, text, &mut parsed, &mut report);
        }
        self.commit(parsed, &mut report)?;
        Ok(report)
    }

    fn commit(
        &self,
        parsed: Vec<(String, Value, ResourceEnvelope)>,
        report: &mut IngestReport,
    ) -> Result<(), StoreError> {
        let _guard = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        let mut index = self.load_index()?;
        let mut hashes: HashSet<String> = index.entries.iter().map(|e| e.hash.clone()).collect();
        let mut ids: HashMap<(ResourceKind, String), String> = index
            .entries
            .iter()
            .map(|e| ((e.kind, e.resource_id.clone()), e.hash.clone()))
            .collect();

        let mut pending: BTreeMap<ResourceKind, Vec<(String, ResourceEnvelope)>> = BTreeMap::new();
        for (location, value, env) in parsed {
            if hashes.contains(&env.raw_source_hash) {
                report.duplicates += 1;
                continue;
            }
            let key = (env.kind(), env.resource.resource_id().to_string());
            if let Some(existing) = ids.get(&key) {
                report.rejected.push(Rejection {
                    location,
                    error: format!(
                        "conflict: {} {:?} already stored with different content (hash {})",
                        key.0.as_str(),
                        key.1,
                        &existing[..12]
                    ),
                });
                continue;
            }
            hashes.insert(env.raw_source_hash.clone());
            ids.insert(key, env.raw_source_hash.clone());
            pending
                .entry(env.kind())
                .or_default()
                .push((canonical_json(&value), env));
        }

        for (kind, docs) in pending {
            let path = self.data_path(kind);
            let mut file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|e| StoreError::io(&path, e))?;
            let mut offset = file.metadata().map_err(|e| StoreError::io(&path, e))?.len();
            let mut buf = Vec::new();
            for (line, env) in docs {
                let len = line.len() as u64;
                index.entries.push(entry_for(&env, offset, len));
                buf.extend_from_slice(line.as_bytes());
                buf.push(b'\n');
                offset += len + 1;
                report.accepted += 1;
            }
            file.write_all(&buf).map_err(|e| StoreError::io(&path, e))?;
            file.sync_data().map_err(|e| StoreError::io(&path, e))?;
        }
        self.write_index(&index)
    }

    fn load_entries(&self, entries: Vec<&IndexEntry>) -> Result<Vec<ResourceEnvelope>, StoreError> {
        let mut files: HashMap<ResourceKind, Vec<u8>> = HashMap::new();
        let mut out = Vec::with_capacity(entries.len());
        for entry in entries {
            let bytes = match files.entry(entry.kind) {
                Entry::Occupied(e) => e.into_mut(),
                Entry::Vacant(e) => {
                    let path = self.data_path(entry.kind);
                    e.insert(fs::read(&path).map_err(|e| StoreError::io(&path, e))?)
                }
            };
            let location = format!("{}@{}", data_file(entry.kind), entry.offset);
            let start = entry.offset as usize;
            let end = start + entry.len as usize;
            let line = bytes
                .get(start..end)
                .ok_or_else(|| StoreError::CorruptData {
                    location: location.clone(),
                    message: "index points past end of data file".into(),
                })?;
            let env = std::str::from_utf8(line)
                .map_err(|e| e.to_string())
                .and_then(|s| serde_json::from_str::<Value>(s).map_err(|e| e.to_string()))
                .and_then(|v| parse_value(&v).map_err(|e| e.to_string()))
                .map_err(|message| StoreError::CorruptData { location, message })?;
            out.push(env);
        }
        Ok(out)
    }
}

fn entry_for(env: &ResourceEnvelope, offset: u64, len: u64) -> IndexEntry {
    IndexEntry {
        kind: env.kind(),
        offset,
        len,
        hash: env.raw_source_hash.clone(),
        resource_id: env.resource.resource_id().to_string(),
        subject_id: env.resource.subject_id().map(str::to_string),
        codes: index_codes(&env.resource),
        timestamp: env.resource.timestamp(),
    }
}

/// Splits one source document into resources: a single resource, a Bundle,
/// or line-delimited JSON.
fn expand_document(
    location: &str,
    text: &str,
    out: &mut Vec<(String, Value, ResourceEnvelope)>,
    report: &mut IngestReport,
) {
    let mut accept =
        |loc: String, value: Value, report: &mut IngestReport| match parse_value(&value) {
            Ok(env) => out.push((loc, value, env)),
            Err(e) => report.rejected.push(Rejection {
                location: loc,
                error: e.to_string(),
            }),
        };

    if text.trim().is_empty() {
        return;
    }
    if let Ok(value) = serde_json::from_str::<Value>(text) {
        if value.get("resourceType").and_then(Value::as_str) == Some("Bundle") {
            let entries = value
                .get("entry")
                .and_then(Value::as_array)
                .cloned()
                .unwrap_or_default();
            for (i, entry) in entries.into_iter().enumerate() {
                let loc = format!("{location}#entry[{i}]");
                match entry.get("resource") {
                    Some(resource) => accept(loc, resource.clone(), report),
                    None => report.rejected.push(Rejection {
                        location: loc,
                        error: "bundle entry has no resource".into(),
                    }),
                }
            }
        } else {
            accept(location.to_string(), value, report);
        }
        return;
    }
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let loc = format!("{location}:{}", lineno + 1);
        match serde_json::from_str::<Value>(line) {
            Ok(value) => accept(loc, value, report),
            Err(e) => report.rejected.push(Rejection {
                location: loc,
                error: format!("malformed JSON: {e}"),
            }),
        }
    }
}

fn collect_files(path: &Path, out: &mut Vec<PathBuf>) -> Result<(), StoreError> {
    let mut children: Vec<PathBuf> = fs::read_dir(path)
        .map_err(|e| StoreError::io(path, e))?
        .map(|entry| entry.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(|e| StoreError::io(path, e))?;
    children.sort();
    for child in children {
        if child.is_dir() {
            collect_files(&child, out)?;
        } else if matches!(
            child.extension().and_then(|e| e.to_str()),
            Some("json" | "ndjson" | "jsonl")
        ) {
            out.push(child);
        }
    }
    Ok(())
}

impl ResourceStore for FsStore {
    fn ingest(&self, source: &Path) -> Result<IngestReport, StoreError> {
        let mut files = Vec::new();
        if source.is_dir() {
            collect_files(source, &mut files)?;
        } else if source.exists() {
            files.push(source.to_path_buf());
        } else {
            return Err(StoreError::io(
                source,
                std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory"),
            ));
        }
        let mut texts = Vec::with_capacity(files.len());
        for f in &files {
            let bytes = fs::read(f).map_err(|e| StoreError::io(f, e))?;
            texts.push((f.display().to_string(), String::from_utf8(bytes)));
        }
        let mut report = IngestReport::default();
        let mut docs = Vec::new();
        for (location, text) in &texts {
            match text {
                Ok(t) => docs.push((location.clone(), t.as_str())),
                Err(_) => report.rejected.push(Rejection {
                    location: location.clone(),
                    error: "file is not valid UTF-8".into(),
                }),
            }
        }
        report.merge(self.ingest_documents(docs)?);
        Ok(report)
    }

    fn query(&self, q: &StoreQuery) -> Result<Vec<ResourceEnvelope>, StoreError> {
        if !q.is_valid() {
            return Err(StoreError::InvalidQuery);
        }
        let index = self.load_index()?;
        let candidates: Vec<&IndexEntry> = index
            .entries
            .iter()
            .filter(|e| q.matches_indexed(e.kind, e.subject_id.as_deref(), &e.codes, e.timestamp))
            .collect();
        let mut envs = self.load_entries(candidates)?;
        if q.metric_kinds.is_some() {
            envs.retain(|env| q.matches(env, &self.registry));
        }
        envs.sort_by(|a, b| {
            let key = |e: &ResourceEnvelope| {
                (
                    e.resource.subject_id().unwrap_or("").to_string(),
                    e.resource.timestamp(),
                    e.resource.resource_id().to_string(),
                    e.kind(),
                )
            };
            key(a).cmp(&key(b))
        });
        Ok(envs)
    }

    fn list_users(&self) -> Result<Vec<PatientRecord>, StoreError> {
        Ok(crate::flatten::collect_patients(
            &self.query(&StoreQuery::all())?,
        ))
    }
}
