use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{GatewayError, TransportError};
use crate::request::ChatRequest;
use crate::transport::Transport;

/// One line of a mock transcript file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub hash: String,
    pub text: String,
}

#[derive(Debug, Error)]
pub enum TranscriptError {
    #[error("transcript line {line}: {message}")]
    Line { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Recorded completions keyed by [`ChatRequest::fingerprint`].
///
/// Serves as a [`Transport`] that never opens a socket; a request whose hash
/// is absent fails with [`GatewayError::MockMiss`] naming that hash.
#[derive(Debug, Clone, Default)]
pub struct MockTranscript {
    entries: HashMap<String, String>,
}

impl MockTranscript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, hash: impl Into<String>, text: impl Into<String>) {
        self.entries.insert(hash.into(), text.into());
    }

    /// Records `text` as the completion for `request`.
    pub fn record(&mut self, request: &ChatRequest, text: impl Into<String>) {
        self.insert(request.fingerprint(), text);
    }

    pub fn get(&self, hash: &str) -> Option<&str> {
        self.entries.get(hash).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Parses line-delimited `{"hash": ..., "text": ...}` objects. Blank lines
    /// are skipped; a later line for the same hash replaces an earlier one.
    pub fn parse(content: &str) -> Result<Self, TranscriptError> {
        let mut transcript = Self::new();
        for (idx, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: TranscriptEntry =
                serde_json::from_str(line).map_err(|e| TranscriptError::Line {
                    line: idx + 1,
                    message: e.to_string(),
                })?;
            if entry.hash.len() != 64 || !entry.hash.bytes().all(|b| b.is_ascii_hexdigit()) {
                return Err(TranscriptError::Line {
                    line: idx + 1,
                    message: format!("hash {:?} is not 64 hex digits", entry.hash),
                });
            }
            transcript.insert(entry.hash.to_ascii_lowercase(), entry.text);
        }
        Ok(transcript)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TranscriptError> {
        let content = std::fs::read_to_string(path)?;
        Self::parse(&content)
    }

    /// Serializes sorted by hash, one entry per line.
    pub fn to_jsonl(&self) -> String {
        let mut hashes: Vec<&String> = self.entries.keys().collect();
        hashes.sort();
        let mut out = String::new();
        for hash in hashes {
            let entry = TranscriptEntry {
                hash: hash.clone(),
                text: self.entries[hash].clone(),
            };
            let _ = writeln!(out, "{}", serde_json::to_string(&entry).expect("entry serializes"));
        }
        out
    }
}

impl Transport for MockTranscript {
    fn send(&self, request: &ChatRequest) -> Result<String, TransportError> {
        let hash = request.fingerprint();
        match self.entries.get(&hash) {
            Some(text) => Ok(text.clone()),
            None => Err(TransportError::Fatal(GatewayError::MockMiss { hash })),
        }
    }

    fn is_network(&self) -> bool {
        false
    }
}
