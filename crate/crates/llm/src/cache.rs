use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::mock::{MockTranscript, TranscriptEntry};

pub const CACHE_FILE: &str = "completions.jsonl";

/// Content-addressed completion cache.
///
/// The on-disk form is an append-only `completions.jsonl` in the mock
/// transcript format, so a warm cache directory doubles as a transcript for
/// hermetic replays. The first text stored for a hash is never replaced.
#[derive(Debug, Default)]
pub struct ResponseCache {
    entries: HashMap<String, String>,
    file: Option<File>,
    path: Option<PathBuf>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn open(dir: impl AsRef<Path>) -> std::io::Result<Self> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let path = dir.join(CACHE_FILE);
        let mut entries = HashMap::new();
        if path.exists() {
            let content = std::fs::read_to_string(&path)?;
            for line in content.lines() {
                // A torn final line from a crash is skipped, not fatal.
                if let Ok(entry) = serde_json::from_str::<TranscriptEntry>(line) {
                    entries.entry(entry.hash).or_insert(entry.text);
                }
            }
        }
        let mut file = OpenOptions::new().create(true).append(true).open(&path)?;
        if std::fs::read(&path)?.last().is_some_and(|&b| b != b'\n') {
            writeln!(file)?;
        }
        Ok(Self {
            entries,
            file: Some(file),
            path: Some(path),
        })
    }

    pub fn get(&self, hash: &str) -> Option<&str> {
        self.entries.get(hash).map(String::as_str)
    }

    /// Stores `text` unless the hash is already present. Returns whether it
    /// was inserted.
    pub fn put(&mut self, hash: &str, text: &str) -> std::io::Result<bool> {
        if self.entries.contains_key(hash) {
            return Ok(false);
        }
        if let Some(file) = self.file.as_mut() {
            let line = serde_json::to_string(&TranscriptEntry {
                hash: hash.to_string(),
                text: text.to_string(),
            })
            .expect("entry serializes");
            writeln!(file, "{line}")?;
            file.flush()?;
        }
        self.entries.insert(hash.to_string(), text.to_string());
        Ok(true)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn to_transcript(&self) -> MockTranscript {
        let mut t = MockTranscript::new();
        for (hash, text) in &self.entries {
            t.insert(hash.clone(), text.clone());
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_write_wins() {
        let mut cache = ResponseCache::in_memory();
        assert!(cache.put("h", "one").unwrap());
        assert!(!cache.put("h", "two").unwrap());
        assert_eq!(cache.get("h"), Some("one"));
    }

    #[test]
    fn persists_across_reopen() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut cache = ResponseCache::open(dir.path()).unwrap();
            cache.put("abc", "text\nwith newline").unwrap();
        }
        let cache = ResponseCache::open(dir.path()).unwrap();
        assert_eq!(cache.get("abc"), Some("text\nwith newline"));
    }

    #[test]
    fn torn_tail_is_ignored() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut cache = ResponseCache::open(dir.path()).unwrap();
            cache.put("a", "1").unwrap();
        }
        let path = dir.path().join(CACHE_FILE);
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        write!(f, "{{\"hash\":\"b\",\"te").unwrap();
        drop(f);
        let mut cache = ResponseCache::open(dir.path()).unwrap();
        assert_eq!(cache.len(), 1);
        cache.put("c", "3").unwrap();
        drop(cache);
        assert_eq!(ResponseCache::open(dir.path()).unwrap().get("c"), Some("3"));
    }
}
