//! Review history: revisions, sessions and the append-only event log.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use spancode_core::inference::PredictionResult;
use spancode_core::{AnnotatedDocument, Code};

use crate::ReviewError;

pub const EVENTS_FILE: &str = "events.jsonl";
pub const DOCUMENTS_DIR: &str = "documents";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RevisionMode {
    /// The model produced both evidence and codes.
    Model,
    /// A reviewer supplied the evidence; the model only assigned codes.
    HumanEvid,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Revision {
    pub timestamp_ms: u64,
    pub mode: RevisionMode,
    pub evidence: Vec<String>,
    pub codes: Vec<Code>,
    #[serde(default)]
    pub unknown_codes: Vec<Code>,
    pub raw: String,
}

impl Revision {
    pub fn from_prediction(result: PredictionResult, mode: RevisionMode, timestamp_ms: u64) -> Self {
        Self {
            timestamp_ms,
            mode,
            evidence: result.evidence,
            codes: result.codes,
            unknown_codes: result.unknown_codes,
            raw: result.raw,
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("revision serializes");
        hex::encode(Sha256::digest(&json))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ReviewSession {
    pub doc_id: String,
    pub revisions: Vec<Revision>,
    /// Always `Some` once a revision exists.
    pub current: Option<usize>,
}

impl ReviewSession {
    pub fn new(doc_id: impl Into<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            ..Self::default()
        }
    }

    pub fn current_revision(&self) -> Option<&Revision> {
        self.current.map(|i| &self.revisions[i])
    }

    /// Digest over every revision plus the current pointer.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.doc_id.as_bytes());
        for r in &self.revisions {
            h.update(r.digest().as_bytes());
        }
        h.update(format!("{:?}", self.current).as_bytes());
        hex::encode(h.finalize())
    }

    fn apply(&mut self, event: &Event) -> Result<(), String> {
        match event {
            Event::RevisionAppended { revision, .. } => {
                self.revisions.push(revision.clone());
                self.current = Some(self.revisions.len() - 1);
            }
            Event::CurrentSet { revision, .. } => {
                if *revision >= self.revisions.len() {
                    return Err(format!(
                        "revision {revision} out of range for {} ({} revisions)",
                        self.doc_id,
                        self.revisions.len()
                    ));
                }
                self.current = Some(*revision);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    RevisionAppended { doc_id: String, revision: Revision },
    CurrentSet { doc_id: String, revision: usize },
}

impl Event {
    pub fn doc_id(&self) -> &str {
        match self {
            Event::RevisionAppended { doc_id, .. } | Event::CurrentSet { doc_id, .. } => doc_id,
        }
    }
}

/// Applies `event` to the matching session, checking it first.
pub fn apply_event(sessions: &mut BTreeMap<String, ReviewSession>, event: &Event) -> Result<(), String> {
    let session = sessions
        .get_mut(event.doc_id())
        .ok_or_else(|| format!("unknown document {}", event.doc_id()))?;
    session.apply(event)
}

/// Decodes a log image into its events and the byte length of the intact
/// prefix.
///
/// Events are written with their newline in a single call, so a final line
/// without one is a write that never completed: it is left out of both. Any
/// other line that is not an event is an error.
pub fn decode_events(content: &[u8]) -> Result<(Vec<Event>, usize), ReviewError> {
    let mut events = Vec::new();
    let mut intact = 0;
    for (idx, chunk) in content.split_inclusive(|&b| b == b'\n').enumerate() {
        let Some(line) = chunk.strip_suffix(b"\n") else {
            break;
        };
        if !line.iter().all(u8::is_ascii_whitespace) {
            let event = serde_json::from_slice::<Event>(line).map_err(|e| ReviewError::Log {
                line: idx + 1,
                reason: e.to_string(),
            })?;
            events.push(event);
        }
        intact += chunk.len();
    }
    Ok((events, intact))
}

/// Line-delimited JSON, one event per line, fsynced on every append.
#[derive(Debug)]
pub struct EventLog {
    path: PathBuf,
    file: File,
}

impl EventLog {
    /// Opens (or creates) the log and returns every intact event in order,
    /// truncating a torn final write (see [`decode_events`]).
    pub fn open(path: impl AsRef<Path>) -> Result<(Self, Vec<Event>), ReviewError> {
        let path = path.as_ref().to_path_buf();
        let io = |source| ReviewError::Io {
            path: path.clone(),
            source,
        };
        let content = match fs::read(&path) {
            Ok(bytes) => bytes,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(io(e)),
        };

        let (events, good_len) = decode_events(&content)?;
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(io)?;
        if good_len < content.len() {
            tracing::warn!(path = %path.display(), bytes = content.len() - good_len, "dropping torn final event");
            file.set_len(good_len as u64).map_err(io)?;
        }
        Ok((Self { path, file }, events))
    }

    pub fn append(&mut self, event: &Event) -> Result<(), ReviewError> {
        let mut line = serde_json::to_vec(event).expect("event serializes");
        line.push(b'\n');
        self.file
            .write_all(&line)
            .and_then(|_| self.file.sync_data())
            .map_err(|source| ReviewError::Io {
                path: self.path.clone(),
                source,
            })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// Reads every `documents/*.json` file under `data_dir`.
pub fn load_documents(data_dir: &Path) -> Result<BTreeMap<String, AnnotatedDocument>, ReviewError> {
    let dir = data_dir.join(DOCUMENTS_DIR);
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| ReviewError::Io { path, source }
    };
    let mut docs = BTreeMap::new();
    for entry in fs::read_dir(&dir).map_err(io(&dir))? {
        let path = entry.map_err(io(&dir))?.path();
        if path.extension().is_none_or(|e| e != "json") {
            continue;
        }
        let text = fs::read_to_string(&path).map_err(io(&path))?;
        let doc: AnnotatedDocument = serde_json::from_str(&text).map_err(|e| ReviewError::Document {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        doc.validate().map_err(|e| ReviewError::Document {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        if docs.contains_key(&doc.id) {
            return Err(ReviewError::Document {
                path,
                reason: format!("duplicate document id {}", doc.id),
            });
        }
        docs.insert(doc.id.clone(), doc);
    }
    Ok(docs)
}

/// Writes each document to `documents/<id>.json`, creating the directory.
/// Existing files for the same ids are overwritten.
pub fn import_documents(data_dir: &Path, docs: &[AnnotatedDocument]) -> Result<usize, ReviewError> {
    let dir = data_dir.join(DOCUMENTS_DIR);
    fs::create_dir_all(&dir).map_err(|source| ReviewError::Io {
        path: dir.clone(),
        source,
    })?;
    for doc in docs {
        if doc.id.is_empty() || doc.id.contains(['/', '\\']) || doc.id.starts_with('.') {
            return Err(ReviewError::Document {
                path: dir.clone(),
                reason: format!("document id {:?} is not usable as a file name", doc.id),
            });
        }
        let path = dir.join(format!("{}.json", doc.id));
        let json = serde_json::to_string_pretty(doc).expect("document serializes");
        fs::write(&path, json).map_err(|source| ReviewError::Io { path, source })?;
    }
    Ok(docs.len())
}
