//! The bundled fixture corpus run end to end against its recorded transcript.

use std::collections::BTreeSet;
use std::fs;
use std::path::PathBuf;

use spancode_core::dataset::{build_ablation, build_doc_sample, ordered_targets, AblationVariant};
use spancode_core::document::parse_documents;
use spancode_core::expansion::{
    aggregate_evidence, build_knowledge_base, mine_corpus, pairs_to_jsonl, validate_pairs, ExpansionConfig, PairSource,
};
use spancode_core::inference::{parse_prediction, predict, predict_with_evidence, InferenceOptions};
use spancode_core::kb::{parse_alpha_index, parse_order_file, AlphaIndex};
use spancode_core::llm::{Gateway, MockTranscript};
use spancode_core::metrics::{
    code_set_metrics, evidence_metrics, match_evidence_llm, match_evidence_local, JudgeOptions, MacroUniverse,
};
use spancode_core::{AnnotatedDocument, Code, CodeHierarchy};

fn fixture(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name);
    fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

struct Corpus {
    kb: CodeHierarchy,
    index: AlphaIndex,
    docs: Vec<AnnotatedDocument>,
}

fn corpus() -> Corpus {
    Corpus {
        kb: parse_order_file(&fixture("icd10cm_order.txt")).unwrap(),
        index: parse_alpha_index(&fixture("alpha_index.jsonl")).unwrap(),
        docs: parse_documents(&fixture("documents.jsonl")).unwrap(),
    }
}

fn gateway() -> Gateway {
    Gateway::mock(MockTranscript::parse(&fixture("llm/transcript.jsonl")).unwrap())
}

#[test]
fn fixture_shape() {
    let c = corpus();
    assert_eq!(c.kb.len(), 56);
    assert_eq!(c.docs.len(), 5);
    assert_eq!(c.index.entries.len(), 28);
    assert_eq!(c.kb.long_description("I25.10"), Some("Atherosclerotic heart disease of native coronary artery without angina pectoris"));
}

#[test]
fn knowledge_base_reaches_full_coverage_without_network() {
    let c = corpus();
    let gw = gateway();
    let targets: BTreeSet<Code> = c.kb.billable_codes().cloned().collect();
    let run = build_knowledge_base(&c.index.entries, &c.docs, &targets, &c.kb, &gw, &ExpansionConfig::default()).unwrap();
    assert!(run.coverage.uncovered.is_empty(), "{:?}", run.coverage.uncovered);
    assert_eq!(run.coverage.covered, targets);
    assert_eq!(run.gold.dropped, 2);
    assert!(run.silver.skipped_documents.is_empty());
    assert_eq!(run.silver.fallback_codes, [Code::parse("K21.9").unwrap()]);
    assert!(run.synthesis.residue.is_empty());
    assert_eq!(run.synthesis.neighbors[&Code::parse("I25.119").unwrap()].as_str(), "I25.110");
    for tier in [PairSource::Gold, PairSource::Silver, PairSource::Synthetic] {
        assert!(run.coverage.per_source[&tier] > 0);
    }
    validate_pairs(&run.all_pairs(), &c.kb).unwrap();
    assert_eq!(gw.network_calls(), 0);
}

#[test]
fn silver_table_is_stable_under_a_warm_cache() {
    let c = corpus();
    let gw = gateway();
    let options = ExpansionConfig::default().mine;
    let first = aggregate_evidence(&mine_corpus(&c.docs, &c.kb, &gw, &options).tuples);
    let calls = gw.transport_calls();
    let second = aggregate_evidence(&mine_corpus(&c.docs, &c.kb, &gw, &options).tuples);
    assert_eq!(gw.transport_calls(), calls);
    assert_eq!(serde_json::to_string(&first).unwrap(), serde_json::to_string(&second).unwrap());
    // The unlabeled K21.9 line in note-001 is filtered out.
    assert_eq!(first.get("K21.9").len(), 1);
}

#[test]
fn aggregation_conserves_counts() {
    let c = corpus();
    let tuples = mine_corpus(&c.docs, &c.kb, &gateway(), &ExpansionConfig::default().mine).tuples;
    let table = aggregate_evidence(&tuples);
    for (code, entries) in &table.codes {
        let total: u32 = entries.iter().map(|e| e.frequency).sum();
        assert_eq!(total as usize, tuples.iter().filter(|(c, _)| c == code).count());
    }
}

#[test]
fn pair_store_is_reproducible() {
    let c = corpus();
    let targets: BTreeSet<Code> = c.kb.billable_codes().cloned().collect();
    let run = |gw: &Gateway| {
        let r = build_knowledge_base(&c.index.entries, &c.docs, &targets, &c.kb, gw, &ExpansionConfig::default()).unwrap();
        pairs_to_jsonl(&r.all_pairs())
    };
    assert_eq!(run(&gateway()), run(&gateway()));
}

#[test]
fn document_samples_round_trip() {
    let c = corpus();
    for doc in &c.docs {
        let sample = build_doc_sample(doc, &c.kb).unwrap();
        let (evidence, codes) = ordered_targets(doc).unwrap();
        let parsed = parse_prediction(&sample.completion, &c.kb);
        assert_eq!(parsed.evidence, evidence, "{}", doc.id);
        assert_eq!(parsed.codes, codes, "{}", doc.id);
        assert!(parsed.unknown_codes.is_empty());
        let gold: BTreeSet<&Code> = doc.codes.iter().collect();
        assert_eq!(codes.iter().collect::<BTreeSet<_>>(), gold);
    }
}

#[test]
fn ablation_counts() {
    let c = corpus();
    let targets: BTreeSet<Code> = c.kb.billable_codes().cloned().collect();
    let run = build_knowledge_base(&c.index.entries, &c.docs, &targets, &c.kb, &gateway(), &ExpansionConfig::default()).unwrap();
    let pairs = run.all_pairs();
    let sizes: Vec<usize> = AblationVariant::ALL
        .iter()
        .map(|v| build_ablation(*v, &c.docs, &pairs, &c.kb, 42, 2).unwrap().len())
        .collect();
    assert_eq!(sizes[0], 10);
    assert_eq!(sizes[1], 10);
    assert!(sizes[2] > sizes[1] && sizes[3] > sizes[2]);
}

#[test]
fn predictions_and_scores() {
    let c = corpus();
    let gw = gateway();
    let options = InferenceOptions::default();
    let mut code_pairs = Vec::new();
    let mut local = Vec::new();
    let mut judged = Vec::new();
    for doc in &c.docs {
        let p = predict(&doc.text, &c.kb, &gw, &options).unwrap();
        code_pairs.push((doc.codes.iter().cloned().collect(), p.codes.iter().cloned().collect()));
        local.push(match_evidence_local(&p.evidence, &doc.evidence_texts(), 0.5));
        judged.push(match_evidence_llm(&p.evidence, &doc.evidence_texts(), &gw, &JudgeOptions::default()).unwrap());

        let (gold_evidence, _) = ordered_targets(doc).unwrap();
        let evid = predict_with_evidence(&doc.text, &gold_evidence, &c.kb, &gw, &options).unwrap();
        assert_eq!(evid.evidence, gold_evidence);
    }
    let m = code_set_metrics(&code_pairs, MacroUniverse::Observed);
    // 18 gold codes; the model finds 14 and adds 2 wrong ones.
    assert_eq!((m.micro.tp, m.micro.fp, m.micro.fn_), (14, 2, 4));
    let judged = evidence_metrics(&judged);
    assert!((judged.recall - 15.0 / 19.0).abs() < 1e-12);
    assert!(evidence_metrics(&local).recall > 0.0);
    assert_eq!(gw.network_calls(), 0);
}
