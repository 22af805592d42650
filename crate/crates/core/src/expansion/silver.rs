//! Two-stage silver mining: per-document extraction, then per-code
//! consolidation of the frequency-ranked candidates.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{CodeEvidenceTable, EvidenceCodePair, EvidenceCount, ExpansionError, PairSource};
use crate::document::AnnotatedDocument;
use crate::kb::{Code, CodeHierarchy, KbError};
use crate::llm::{ChatRequest, Gateway};
use crate::templates;
use crate::text::{bullet_items, collapse_whitespace, evidence_key, strip_list_marker, CODE_TOKEN};

const NO_EVIDENCE: &str = "no evidence found";

/// `CODE - long description`, the form every prompt uses to name a code.
pub(crate) fn describe(code: &Code, hierarchy: &CodeHierarchy) -> Result<String, ExpansionError> {
    let desc = hierarchy
        .long_description(code.as_str())
        .ok_or_else(|| KbError::UnknownCode(code.clone()))?;
    Ok(format!("{code} - {desc}"))
}

/// Bullet list for a prompt slot; `None` stands in for an empty list.
pub(crate) fn bullet_block(items: &[String]) -> String {
    if items.is_empty() {
        return "None".into();
    }
    items.iter().map(|i| format!("- {i}")).collect::<Vec<_>>().join("\n")
}

/// Bullet items minus template echoes and the "None" placeholder, deduped by
/// normalized text.
pub(crate) fn clean_items(completion: &str) -> Vec<String> {
    let mut seen = HashSet::new();
    bullet_items(completion)
        .into_iter()
        .filter(|item| {
            let t = item.trim_matches(|c: char| c == '.' || c.is_whitespace());
            !(t.is_empty()
                || t.eq_ignore_ascii_case("none")
                || (item.starts_with('<') && item.ends_with('>')))
        })
        .filter(|item| seen.insert(evidence_key(item)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MineOptions {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub parallelism: usize,
}

impl Default for MineOptions {
    fn default() -> Self {
        Self {
            model: "llama3.1-70b-instruct".into(),
            temperature: 0.0,
            max_tokens: 2048,
            parallelism: 4,
        }
    }
}

impl MineOptions {
    fn request(&self, prompt: String) -> ChatRequest {
        ChatRequest::new(self.model.clone(), prompt)
            .with_temperature(self.temperature)
            .with_max_tokens(self.max_tokens)
    }
}

/// Stage-1 prompt: the note and its labeled codes, one `CODE - description`
/// line each, in label order.
pub fn render_extract_prompt(doc: &AnnotatedDocument, hierarchy: &CodeHierarchy) -> Result<String, ExpansionError> {
    let codes = doc
        .codes
        .iter()
        .map(|c| describe(c, hierarchy))
        .collect::<Result<Vec<_>, _>>()?
        .join("\n");
    Ok(templates::SILVER_EXTRACT
        .render(&[("text", &doc.text), ("diagnosis_codes", &codes)])
        .expect("extract template slots")
        .text)
}

/// Reads `CODE - description > evidence` lines.
///
/// Returns `None` when no line is recognizable at all. "No evidence found",
/// alone or after the `>`, is recognized but yields nothing. Codes outside
/// `labels` are discarded.
pub fn parse_extract_completion(text: &str, labels: &[Code]) -> Option<Vec<(Code, String)>> {
    let mut recognized = false;
    let mut out = Vec::new();
    for raw in text.lines() {
        let line = strip_list_marker(raw).trim();
        if is_no_evidence(line) {
            recognized = true;
            continue;
        }
        let Some((head, evidence)) = line.split_once('>') else {
            continue;
        };
        let Some(token) = CODE_TOKEN.find(head).filter(|m| head[..m.start()].trim().is_empty()) else {
            continue;
        };
        let Ok(code) = Code::parse(token.as_str()) else {
            continue;
        };
        recognized = true;
        let evidence = collapse_whitespace(evidence.trim().trim_matches('"'));
        if evidence.is_empty() || is_no_evidence(&evidence) {
            continue;
        }
        if !labels.contains(&code) {
            tracing::debug!(%code, "discarding evidence for an unlabeled code");
            continue;
        }
        out.push((code, evidence));
    }
    recognized.then_some(out)
}

fn is_no_evidence(s: &str) -> bool {
    s.trim_matches(|c: char| c == '"' || c == '.' || c.is_whitespace())
        .eq_ignore_ascii_case(NO_EVIDENCE)
}

/// Stage 1 for one document.
pub fn mine_document_evidence(
    doc: &AnnotatedDocument,
    hierarchy: &CodeHierarchy,
    gateway: &Gateway,
    options: &MineOptions,
) -> Result<Vec<(Code, String)>, ExpansionError> {
    let prompt = render_extract_prompt(doc, hierarchy)?;
    let response = gateway.complete(&options.request(prompt))?;
    parse_extract_completion(&response.text, &doc.codes).ok_or_else(|| ExpansionError::Unparseable {
        doc: doc.id.clone(),
    })
}

#[derive(Debug, Default)]
pub struct MiningOutcome {
    /// Tuples from every document that parsed, in document order.
    pub tuples: Vec<(Code, String)>,
    /// Documents skipped, with the reason.
    pub skipped: Vec<(String, ExpansionError)>,
}

/// Stage 1 over a corpus, documents fanned out through the gateway.
/// A document that fails is logged and skipped; the rest continue.
pub fn mine_corpus(
    docs: &[AnnotatedDocument],
    hierarchy: &CodeHierarchy,
    gateway: &Gateway,
    options: &MineOptions,
) -> MiningOutcome {
    let mut outcome = MiningOutcome::default();
    let mut requests = Vec::new();
    let mut owners = Vec::new();
    for doc in docs {
        match render_extract_prompt(doc, hierarchy) {
            Ok(prompt) => {
                requests.push(options.request(prompt));
                owners.push(doc);
            }
            Err(e) => outcome.skipped.push((doc.id.clone(), e)),
        }
    }
    let responses = gateway.complete_many(&requests, options.parallelism);
    for (doc, response) in owners.into_iter().zip(responses) {
        let parsed = response
            .map_err(ExpansionError::from)
            .and_then(|r| {
                parse_extract_completion(&r.text, &doc.codes).ok_or_else(|| ExpansionError::Unparseable {
                    doc: doc.id.clone(),
                })
            });
        match parsed {
            Ok(tuples) => outcome.tuples.extend(tuples),
            Err(e) => {
                tracing::warn!(doc = %doc.id, error = %e, "skipping document");
                outcome.skipped.push((doc.id.clone(), e));
            }
        }
    }
    outcome
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConsolidateOptions {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Upper bound on representative spans kept per code.
    pub cap: usize,
    /// Candidates kept when the model returns nothing usable.
    pub fallback_k: usize,
    /// Candidates shown per call; larger lists are refined in rounds, each
    /// round's output becoming the next round's original set.
    pub chunk_size: usize,
}

impl Default for ConsolidateOptions {
    fn default() -> Self {
        Self {
            model: "llama3.1-70b-instruct".into(),
            temperature: 0.0,
            max_tokens: 512,
            cap: 10,
            fallback_k: 5,
            chunk_size: 50,
        }
    }
}

impl ConsolidateOptions {
    fn request(&self, prompt: String) -> ChatRequest {
        ChatRequest::new(self.model.clone(), prompt)
            .with_temperature(self.temperature)
            .with_max_tokens(self.max_tokens)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Consolidated {
    pub evidence: Vec<String>,
    /// True when some round fell back to the top candidates.
    pub fallback: bool,
}

pub fn render_refine_prompt(
    code: &Code,
    hierarchy: &CodeHierarchy,
    index_terms: &[String],
    existing: &[String],
    candidates: &[String],
) -> Result<String, ExpansionError> {
    let named = describe(code, hierarchy)?;
    Ok(templates::SILVER_REFINE
        .render(&[
            ("code", &named),
            ("alphabetic_index_term", &bullet_block(index_terms)),
            ("evidence_set", &bullet_block(existing)),
            ("mimiciv_evidence", &bullet_block(candidates)),
        ])
        .expect("refine template slots")
        .text)
}

/// Stage 2 for one code.
///
/// The prompt ends with an open `- ` bullet, so the first completion line
/// may lack its marker. Output is deduplicated and capped; an empty result
/// falls back to the top `fallback_k` candidates of that round.
pub fn consolidate_code_evidence(
    code: &Code,
    candidates: &[EvidenceCount],
    index_terms: &[String],
    existing: &[String],
    hierarchy: &CodeHierarchy,
    gateway: &Gateway,
    options: &ConsolidateOptions,
) -> Result<Consolidated, ExpansionError> {
    if candidates.is_empty() && index_terms.is_empty() {
        return Err(ExpansionError::NothingToConsolidate(code.clone()));
    }
    let names: Vec<String> = candidates.iter().map(|c| c.evidence.clone()).collect();
    let mut current = existing.to_vec();
    let mut fallback = false;
    let chunks: Vec<&[String]> = if names.is_empty() {
        vec![&[]]
    } else {
        names.chunks(options.chunk_size.max(1)).collect()
    };
    for chunk in chunks {
        let prompt = render_refine_prompt(code, hierarchy, index_terms, &current, chunk)?;
        let response = gateway.complete(&options.request(prompt))?;
        let mut items = clean_items(&response.text);
        if items.is_empty() {
            tracing::warn!(%code, "empty consolidation; falling back to top candidates");
            fallback = true;
            items = chunk.iter().take(options.fallback_k).cloned().collect();
            if items.is_empty() {
                items = current.clone();
            }
        }
        items.truncate(options.cap);
        current = items;
    }
    Ok(Consolidated {
        evidence: current,
        fallback,
    })
}

/// Stage 2 over a table, codes in order. Index terms come from the gold
/// knowledge. Each kept span becomes a silver pair carrying its mined
/// frequency when it matches a candidate.
pub fn consolidate_table(
    table: &CodeEvidenceTable,
    index_terms: &std::collections::BTreeMap<Code, Vec<String>>,
    hierarchy: &CodeHierarchy,
    gateway: &Gateway,
    options: &ConsolidateOptions,
) -> Result<(Vec<EvidenceCodePair>, Vec<Code>), ExpansionError> {
    let mut pairs = Vec::new();
    let mut fell_back = Vec::new();
    for (code, candidates) in &table.codes {
        let terms = index_terms.get(code).map(Vec::as_slice).unwrap_or(&[]);
        let result = consolidate_code_evidence(code, candidates, terms, &[], hierarchy, gateway, options)?;
        if result.fallback {
            fell_back.push(code.clone());
        }
        for evidence in result.evidence {
            let key = evidence_key(&evidence);
            let frequency = candidates
                .iter()
                .find(|c| evidence_key(&c.evidence) == key)
                .map(|c| c.frequency);
            pairs.push(EvidenceCodePair {
                evidence,
                code: code.clone(),
                source: PairSource::Silver,
                frequency,
            });
        }
    }
    Ok((pairs, fell_back))
}
