//! Regenerates `fixtures/llm/transcript.jsonl` from the hand-written
//! completions in `fixtures/llm/authored.json`.
//!
//! The real pipeline runs against a routing transport that picks the authored
//! completion for each prompt; every request/response pair is then written
//! out as a mock transcript.
//!
//!     cargo run -p spancode-core --example fixture_transcripts [FIXTURE_DIR]

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::PathBuf;

use serde::Deserialize;
use spancode_core::dataset::ordered_targets;
use spancode_core::document::parse_documents;
use spancode_core::expansion::{build_knowledge_base, ExpansionConfig};
use spancode_core::inference::{predict, predict_with_evidence, InferenceOptions};
use spancode_core::kb::{parse_alpha_index, parse_order_file};
use spancode_core::llm::{
    ChatRequest, Gateway, GatewayConfig, GatewayError, ResponseCache, Transport, TransportError,
};
use spancode_core::metrics::{match_evidence_llm, JudgeOptions};
use spancode_core::{AnnotatedDocument, Code};

#[derive(Deserialize)]
struct Authored {
    extract: BTreeMap<String, String>,
    refine: BTreeMap<String, String>,
    synthesis: BTreeMap<String, String>,
    predict: BTreeMap<String, String>,
    recode: BTreeMap<String, String>,
    judge: BTreeMap<String, String>,
}

struct Router {
    authored: Authored,
    docs: Vec<AnnotatedDocument>,
}

fn line_after<'a>(prompt: &'a str, marker: &str) -> Option<&'a str> {
    let rest = &prompt[prompt.find(marker)? + marker.len()..];
    rest.split([' ', '\n']).next()
}

impl Router {
    fn doc_by_text(&self, prompt: &str) -> Option<&AnnotatedDocument> {
        self.docs.iter().find(|d| prompt.contains(&d.text))
    }

    fn route(&self, prompt: &str) -> Option<(&'static str, String)> {
        if prompt.starts_with("You are a clinical evidence evaluation expert.") {
            let doc = self.docs.iter().find(|d| {
                prompt.contains(&format!("### Human-annotated Evidence:\n{}\n", d.evidence_texts().join("\n")))
            })?;
            return Some(("judge", doc.id.clone()));
        }
        if prompt.contains("Your task is to extract the *verbatim minimal text spans*") {
            return Some(("extract", self.doc_by_text(prompt)?.id.clone()));
        }
        if prompt.contains("Your task is to update and refine the Evidence Set") {
            return Some(("refine", line_after(prompt, "### ICD-10-CM Code\n")?.to_string()));
        }
        if prompt.contains("synthesize a focused, audit-defensible list") {
            return Some(("synthesis", line_after(prompt, "the ICD-10-CM code: ")?.to_string()));
        }
        let doc = self.doc_by_text(prompt)?;
        let kind = if prompt.ends_with("### ICD-10-CM Codes\n") { "recode" } else { "predict" };
        Some((kind, doc.id.clone()))
    }

    fn table(&self, kind: &str) -> &BTreeMap<String, String> {
        match kind {
            "extract" => &self.authored.extract,
            "refine" => &self.authored.refine,
            "synthesis" => &self.authored.synthesis,
            "predict" => &self.authored.predict,
            "recode" => &self.authored.recode,
            _ => &self.authored.judge,
        }
    }
}

impl Transport for Router {
    fn send(&self, request: &ChatRequest) -> Result<String, TransportError> {
        let miss = || TransportError::Fatal(GatewayError::MockMiss { hash: request.fingerprint() });
        let (kind, key) = self.route(&request.user).ok_or_else(miss)?;
        let text = self.table(kind).get(&key).ok_or_else(|| {
            eprintln!("no authored {kind} completion for {key}");
            miss()
        })?;
        Ok(text.clone())
    }

    fn is_network(&self) -> bool {
        false
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures"));
    let kb = parse_order_file(&fs::read_to_string(dir.join("icd10cm_order.txt"))?)?;
    let index = parse_alpha_index(&fs::read_to_string(dir.join("alpha_index.jsonl"))?)?;
    let docs = parse_documents(&fs::read_to_string(dir.join("documents.jsonl"))?)?;
    let authored: Authored = serde_json::from_str(&fs::read_to_string(dir.join("llm/authored.json"))?)?;
    let expected: usize = [
        &authored.extract,
        &authored.refine,
        &authored.synthesis,
        &authored.predict,
        &authored.recode,
        &authored.judge,
    ]
    .iter()
    .map(|t| t.len())
    .sum();

    let router = Router {
        authored,
        docs: docs.clone(),
    };
    let gateway = Gateway::new(router, GatewayConfig::default(), ResponseCache::in_memory());

    let targets: BTreeSet<Code> = kb.billable_codes().cloned().collect();
    let run = build_knowledge_base(&index.entries, &docs, &targets, &kb, &gateway, &ExpansionConfig::default())?;
    eprintln!(
        "gold {} silver {} synthetic {} uncovered {:?}",
        run.gold.pairs.len(),
        run.silver.pairs.len(),
        run.synthesis.pairs.len(),
        run.coverage.uncovered
    );

    let infer = InferenceOptions::default();
    for doc in &docs {
        let predicted = predict(&doc.text, &kb, &gateway, &infer)?;
        match_evidence_llm(&predicted.evidence, &doc.evidence_texts(), &gateway, &JudgeOptions::default())?;
        let (gold_evidence, _) = ordered_targets(doc)?;
        predict_with_evidence(&doc.text, &gold_evidence, &kb, &gateway, &infer)?;
    }

    let transcript = gateway.cache_transcript();
    if transcript.len() != expected {
        eprintln!("warning: {} authored completions, {} used", expected, transcript.len());
    }
    let out = dir.join("llm/transcript.jsonl");
    fs::write(&out, transcript.to_jsonl())?;
    eprintln!("wrote {} entries to {}", transcript.len(), out.display());
    Ok(())
}
