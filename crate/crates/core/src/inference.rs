//! Inference prompts and completion parsing.
//!
//! The standard prompt is the document training template with the note
//! substituted. The "+ Evid." prompt appends a prefilled evidence block and
//! the code header, so the model only has to assign codes.

use std::collections::HashSet;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::{Code, CodeHierarchy, Strictness};
use crate::llm::{ChatRequest, Gateway, GatewayError};
use crate::templates::{self, CODES_HEADER, EVIDENCE_HEADER};
use crate::text::{collapse_whitespace, strip_list_marker, CODE_TOKEN};

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("clinical note is empty")]
    EmptyNote,
    #[error("evidence list is empty")]
    EmptyEvidence,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("prediction line {line}: {reason}")]
    Record { line: usize, reason: String },
}

pub fn render_inference_prompt(note: &str) -> Result<String, InferenceError> {
    if note.trim().is_empty() {
        return Err(InferenceError::EmptyNote);
    }
    Ok(templates::DOCUMENT
        .render(&[("text", note)])
        .expect("document template slots")
        .text)
}

/// Standard prompt followed by the given evidence under the evidence header
/// and an open code header. Spans are kept verbatim and in order.
pub fn render_evid_prompt(note: &str, human_evidence: &[String]) -> Result<String, InferenceError> {
    if human_evidence.is_empty() {
        return Err(InferenceError::EmptyEvidence);
    }
    let mut prompt = render_inference_prompt(note)?;
    prompt.push_str(&evidence_block(human_evidence));
    prompt.push_str(CODES_HEADER);
    prompt.push('\n');
    Ok(prompt)
}

/// `### Evidence`, a blank line, one span per line, a blank line.
pub(crate) fn evidence_block(spans: &[String]) -> String {
    let mut out = format!("{EVIDENCE_HEADER}\n\n");
    for span in spans {
        out.push_str(span);
        out.push('\n');
    }
    out.push('\n');
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionResult {
    pub evidence: Vec<String>,
    pub codes: Vec<Code>,
    pub raw: String,
    /// Shape-valid codes absent from the knowledge base (also in `codes`).
    pub unknown_codes: Vec<Code>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Evidence,
    Codes,
}

fn header_kind(line: &str) -> Option<Section> {
    let t = line.trim();
    let rest = t.strip_prefix('#')?.trim_start_matches('#');
    let name = rest.trim().trim_end_matches(':').trim().to_ascii_lowercase();
    match name.as_str() {
        "evidence" => Some(Section::Evidence),
        "icd-10-cm codes" => Some(Section::Codes),
        _ => None,
    }
}

/// Parses a free-text completion. Never fails.
///
/// With a code header, evidence is every non-blank line of the evidence
/// section (list markers stripped) and codes are the first code-shaped token
/// of each line in the code section. Without one, the whole text is scanned
/// for code-shaped tokens and evidence is empty. Codes are normalized
/// leniently and deduplicated in first-seen order.
pub fn parse_prediction(completion: &str, hierarchy: &CodeHierarchy) -> PredictionResult {
    let has_code_header = completion.lines().any(|l| header_kind(l) == Some(Section::Codes));
    let mut evidence = Vec::new();
    let mut candidates: Vec<&str> = Vec::new();
    if has_code_header {
        let mut section = None;
        for line in completion.lines() {
            if let Some(kind) = header_kind(line) {
                section = Some(kind);
                continue;
            }
            match section {
                Some(Section::Evidence) => {
                    let span = collapse_whitespace(strip_list_marker(line));
                    if !span.is_empty() {
                        evidence.push(span);
                    }
                }
                Some(Section::Codes) => {
                    if let Some(m) = CODE_TOKEN.find(line) {
                        candidates.push(m.as_str());
                    }
                }
                None => {}
            }
        }
    } else {
        candidates.extend(CODE_TOKEN.find_iter(completion).map(|m| m.as_str()));
    }

    let mut seen = HashSet::new();
    let mut codes = Vec::new();
    let mut unknown_codes = Vec::new();
    for raw in candidates {
        let Ok(normalized) = hierarchy.normalize(raw, Strictness::Lenient) else {
            continue;
        };
        if seen.insert(normalized.code.clone()) {
            if !normalized.known {
                unknown_codes.push(normalized.code.clone());
            }
            codes.push(normalized.code);
        }
    }
    PredictionResult {
        evidence,
        codes,
        raw: completion.to_string(),
        unknown_codes,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceOptions {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for InferenceOptions {
    fn default() -> Self {
        Self {
            model: "scl-llama3.1-8b".into(),
            temperature: 0.0,
            max_tokens: 1024,
        }
    }
}

impl InferenceOptions {
    pub fn request(&self, prompt: String) -> ChatRequest {
        ChatRequest::new(self.model.clone(), prompt)
            .with_temperature(self.temperature)
            .with_max_tokens(self.max_tokens)
    }
}

/// Standard mode: the model produces evidence and codes.
pub fn predict(
    note: &str,
    hierarchy: &CodeHierarchy,
    gateway: &Gateway,
    options: &InferenceOptions,
) -> Result<PredictionResult, InferenceError> {
    let prompt = render_inference_prompt(note)?;
    let response = gateway.complete(&options.request(prompt))?;
    Ok(parse_prediction(&response.text, hierarchy))
}

/// "+ Evid." mode: the given evidence replaces the model's, which then only
/// assigns codes. The result's evidence is exactly `evidence`.
pub fn predict_with_evidence(
    note: &str,
    evidence: &[String],
    hierarchy: &CodeHierarchy,
    gateway: &Gateway,
    options: &InferenceOptions,
) -> Result<PredictionResult, InferenceError> {
    let prompt = render_evid_prompt(note, evidence)?;
    let response = gateway.complete(&options.request(prompt))?;
    // The prompt already opened the code section.
    let text = format!("{CODES_HEADER}\n{}", response.text);
    let mut result = parse_prediction(&text, hierarchy);
    result.evidence = evidence.to_vec();
    result.raw = response.text;
    Ok(result)
}

/// One line of the prediction store.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredPrediction {
    pub doc_id: String,
    pub evidence: Vec<String>,
    pub codes: Vec<Code>,
    pub raw: String,
}

impl StoredPrediction {
    pub fn new(doc_id: impl Into<String>, result: &PredictionResult) -> Self {
        Self {
            doc_id: doc_id.into(),
            evidence: result.evidence.clone(),
            codes: result.codes.clone(),
            raw: result.raw.clone(),
        }
    }
}

pub fn parse_prediction_store(content: &str) -> Result<Vec<StoredPrediction>, InferenceError> {
    content
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(idx, line)| {
            serde_json::from_str(line).map_err(|e| InferenceError::Record {
                line: idx + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

pub fn prediction_store_to_jsonl(predictions: &[StoredPrediction]) -> String {
    predictions
        .iter()
        .map(|p| serde_json::to_string(p).expect("prediction serializes") + "\n")
        .collect()
}
