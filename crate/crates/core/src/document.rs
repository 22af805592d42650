//! Clinical notes with gold codes and gold evidence spans.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::Code;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DocumentError {
    #[error("document {doc}: evidence {span:?} links code {code}, which is not among the document's codes")]
    UnlistedCode { doc: String, span: String, code: Code },
    #[error("document {doc}: evidence {span:?} does not occur at character offset {start}")]
    OffsetMismatch { doc: String, span: String, start: usize },
    #[error("document {doc}: evidence {span:?} does not occur in the note")]
    SpanNotFound { doc: String, span: String },
    #[error("document {doc}: empty evidence span")]
    EmptySpan { doc: String },
    #[error("document line {line}: {reason}")]
    Record { line: usize, reason: String },
}

/// One gold evidence span. `start` is a character (not byte) offset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceAnnotation {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<usize>,
    pub code: Code,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedDocument {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub codes: Vec<Code>,
    #[serde(default)]
    pub evidence: Vec<EvidenceAnnotation>,
}

impl AnnotatedDocument {
    /// Checks linked codes and any explicit offsets.
    pub fn validate(&self) -> Result<(), DocumentError> {
        for ev in &self.evidence {
            if ev.text.trim().is_empty() {
                return Err(DocumentError::EmptySpan {
                    doc: self.id.clone(),
                });
            }
            if !self.codes.contains(&ev.code) {
                return Err(DocumentError::UnlistedCode {
                    doc: self.id.clone(),
                    span: ev.text.clone(),
                    code: ev.code.clone(),
                });
            }
            if ev.start.is_some() {
                self.position_of(ev)?;
            }
        }
        Ok(())
    }

    /// Character position of an evidence span: its explicit offset when
    /// present (verified), otherwise its first occurrence in the note.
    pub fn position_of(&self, ev: &EvidenceAnnotation) -> Result<usize, DocumentError> {
        match ev.start {
            Some(start) => {
                let begins = char_to_byte(&self.text, start)
                    .is_some_and(|byte| self.text[byte..].starts_with(&ev.text));
                if begins {
                    Ok(start)
                } else {
                    Err(DocumentError::OffsetMismatch {
                        doc: self.id.clone(),
                        span: ev.text.clone(),
                        start,
                    })
                }
            }
            None => self
                .text
                .find(&ev.text)
                .map(|byte| self.text[..byte].chars().count())
                .ok_or_else(|| DocumentError::SpanNotFound {
                    doc: self.id.clone(),
                    span: ev.text.clone(),
                }),
        }
    }

    pub fn evidence_texts(&self) -> Vec<String> {
        self.evidence.iter().map(|e| e.text.clone()).collect()
    }
}

fn char_to_byte(s: &str, char_idx: usize) -> Option<usize> {
    if char_idx == s.chars().count() {
        return Some(s.len());
    }
    s.char_indices().nth(char_idx).map(|(b, _)| b)
}

/// Parses and validates one document per line.
pub fn parse_documents(content: &str) -> Result<Vec<AnnotatedDocument>, DocumentError> {
    let mut docs = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let doc: AnnotatedDocument = serde_json::from_str(line).map_err(|e| DocumentError::Record {
            line: idx + 1,
            reason: e.to_string(),
        })?;
        doc.validate()?;
        docs.push(doc);
    }
    Ok(docs)
}

pub fn documents_to_jsonl(docs: &[AnnotatedDocument]) -> String {
    docs.iter()
        .map(|d| serde_json::to_string(d).expect("document serializes") + "\n")
        .collect()
}
