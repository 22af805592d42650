#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use spancode_core::document::parse_documents;
use spancode_core::kb::parse_order_file;
use spancode_core::llm::{ChatRequest, Gateway, GatewayConfig, MockTranscript, ResponseCache, Transport, TransportError};
use spancode_core::text::evidence_key;
use spancode_core::{AnnotatedDocument, Code, CodeHierarchy};
use spancode_review::{import_documents, ReviewService, ServiceOptions};

pub fn fixture(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

pub fn hierarchy() -> Arc<CodeHierarchy> {
    Arc::new(parse_order_file(&fixture("icd10cm_order.txt")).unwrap())
}

pub fn documents() -> Vec<AnnotatedDocument> {
    parse_documents(&fixture("documents.jsonl")).unwrap()
}

pub fn transcript() -> MockTranscript {
    MockTranscript::parse(&fixture("llm/transcript.jsonl")).unwrap()
}

/// Data directory holding the given documents and no events yet.
pub fn data_dir(docs: &[AnnotatedDocument]) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    import_documents(dir.path(), docs).unwrap();
    dir
}

/// Timestamps 1, 2, 3, ... so revision content is reproducible.
pub fn options() -> ServiceOptions {
    let tick = Arc::new(AtomicU64::new(0));
    ServiceOptions {
        clock: Arc::new(move || tick.fetch_add(1, Ordering::SeqCst) + 1),
        ..ServiceOptions::default()
    }
}

pub fn open(dir: &Path, gateway: Arc<Gateway>) -> Arc<ReviewService> {
    Arc::new(ReviewService::open(dir, hierarchy(), gateway, options()).unwrap())
}

/// Answers "+ Evid." prompts by looking each span up in the fixture's gold
/// evidence; every other prompt goes to the recorded transcript.
pub struct FakeCoder {
    lexicon: BTreeMap<String, Code>,
    kb: Arc<CodeHierarchy>,
    transcript: MockTranscript,
}

impl FakeCoder {
    pub fn new() -> Self {
        let lexicon = documents()
            .iter()
            .flat_map(|d| d.evidence.iter().map(|e| (evidence_key(&e.text), e.code.clone())))
            .collect();
        Self {
            lexicon,
            kb: hierarchy(),
            transcript: transcript(),
        }
    }

    /// Codes the coder assigns to `spans`, in span order without repeats.
    pub fn expected_codes(&self, spans: &[String]) -> Vec<Code> {
        let mut out: Vec<Code> = Vec::new();
        for span in spans {
            if let Some(code) = self.lexicon.get(&evidence_key(span)) {
                if !out.contains(code) {
                    out.push(code.clone());
                }
            }
        }
        out
    }

    pub fn gateway(self) -> Gateway {
        Gateway::new(self, GatewayConfig::default(), ResponseCache::in_memory())
    }
}

impl Transport for FakeCoder {
    fn send(&self, request: &ChatRequest) -> Result<String, TransportError> {
        const OPEN: &str = "### ICD-10-CM Codes\n";
        let prompt = &request.user;
        if !prompt.ends_with(OPEN) {
            return self.transcript.send(request);
        }
        let body = &prompt[..prompt.len() - OPEN.len()];
        let block = &body[body.rfind("### Evidence\n\n").expect("evidence block") + "### Evidence\n\n".len()..];
        let spans: Vec<String> = block.strip_suffix("\n\n").unwrap_or(block).split('\n').map(str::to_string).collect();
        let lines: Vec<String> = self
            .expected_codes(&spans)
            .iter()
            .map(|c| format!("{c} - {}", self.kb.long_description(c.as_str()).unwrap()))
            .collect();
        Ok(lines.join("\n"))
    }

    fn is_network(&self) -> bool {
        false
    }
}
