//! The span knowledge base: gold, silver and synthetic evidence-code pairs.
//!
//! Gold pairs come straight from the Alphabetic Index. Silver pairs are
//! mined from coded notes in two stages (per-document extraction, then
//! per-code consolidation). Synthetic pairs fill whatever the first two tiers
//! leave uncovered, borrowing context from the nearest covered code.

mod silver;
mod synthesis;

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use silver::{
    consolidate_code_evidence, consolidate_table, mine_corpus, mine_document_evidence, parse_extract_completion,
    render_extract_prompt, render_refine_prompt, ConsolidateOptions, Consolidated, MineOptions, MiningOutcome,
};
pub use synthesis::{
    parse_synthesis_completion, render_synthesis_prompt, synthesize_all, synthesize_for_code, Synthesis,
    SynthesisOptions, SynthesisRun,
};

use crate::document::AnnotatedDocument;
use crate::kb::{Code, CodeHierarchy, IndexEntry, KbError};
use crate::llm::{Gateway, GatewayError};
use crate::text::{collapse_whitespace, evidence_key};

#[derive(Debug, Error)]
pub enum ExpansionError {
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("document {doc}: completion has no recognizable evidence lines")]
    Unparseable { doc: String },
    #[error("code {0} has neither candidates nor index terms to consolidate")]
    NothingToConsolidate(Code),
    #[error("code {0} is already covered")]
    AlreadyCovered(Code),
    #[error("pair store line {line}: {reason}")]
    Record { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairSource {
    Gold,
    Silver,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceCodePair {
    pub evidence: String,
    pub code: Code,
    pub source: PairSource,
    pub frequency: Option<u32>,
}

impl EvidenceCodePair {
    pub fn new(evidence: impl Into<String>, code: Code, source: PairSource) -> Self {
        Self {
            evidence: evidence.into(),
            code,
            source,
            frequency: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GoldPairs {
    pub pairs: Vec<EvidenceCodePair>,
    /// Entries whose code is not in the hierarchy.
    pub dropped: usize,
}

/// One gold pair per index entry whose code exists in the hierarchy.
pub fn extract_gold_pairs(index: &[IndexEntry], hierarchy: &CodeHierarchy) -> GoldPairs {
    let mut out = GoldPairs::default();
    for entry in index {
        let evidence = collapse_whitespace(&entry.term);
        if evidence.is_empty() || !hierarchy.contains(entry.code.as_str()) {
            tracing::debug!(term = %entry.term, code = %entry.code, "dropping index entry");
            out.dropped += 1;
            continue;
        }
        out.pairs.push(EvidenceCodePair::new(evidence, entry.code.clone(), PairSource::Gold));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceCount {
    pub evidence: String,
    pub frequency: u32,
}

/// Per-code evidence candidates, most frequent first.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeEvidenceTable {
    pub codes: BTreeMap<Code, Vec<EvidenceCount>>,
}

impl CodeEvidenceTable {
    pub fn get(&self, code: &str) -> &[EvidenceCount] {
        self.codes.get(code).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }
}

/// Groups by code, merges evidence that differs only in case or spacing
/// (first surface form wins), counts, and sorts by frequency then text.
pub fn aggregate_evidence(tuples: &[(Code, String)]) -> CodeEvidenceTable {
    let mut grouped: BTreeMap<Code, (Vec<EvidenceCount>, BTreeMap<String, usize>)> = BTreeMap::new();
    for (code, evidence) in tuples {
        let surface = collapse_whitespace(evidence);
        if surface.is_empty() {
            continue;
        }
        let (list, slots) = grouped.entry(code.clone()).or_default();
        match slots.get(&evidence_key(&surface)) {
            Some(&i) => list[i].frequency += 1,
            None => {
                slots.insert(evidence_key(&surface), list.len());
                list.push(EvidenceCount {
                    evidence: surface,
                    frequency: 1,
                });
            }
        }
    }
    CodeEvidenceTable {
        codes: grouped
            .into_iter()
            .map(|(code, (mut list, _))| {
                list.sort_by(|a, b| b.frequency.cmp(&a.frequency).then_with(|| a.evidence.cmp(&b.evidence)));
                (code, list)
            })
            .collect(),
    }
}

/// Evidence per code assembled from pair lists, earlier lists first, with
/// normalized duplicates removed. Within a list, more frequent evidence comes
/// first, then alphabetical, so the result does not depend on input order.
pub fn knowledge_from_pairs<'a>(
    tiers: impl IntoIterator<Item = &'a [EvidenceCodePair]>,
) -> BTreeMap<Code, Vec<String>> {
    let mut out: BTreeMap<Code, Vec<String>> = BTreeMap::new();
    let mut seen: HashSet<(Code, String)> = HashSet::new();
    for pairs in tiers {
        let mut pairs: Vec<&EvidenceCodePair> = pairs.iter().collect();
        pairs.sort_by(|a, b| {
            (&a.code, std::cmp::Reverse(a.frequency), &a.evidence).cmp(&(&b.code, std::cmp::Reverse(b.frequency), &b.evidence))
        });
        for p in pairs {
            if seen.insert((p.code.clone(), evidence_key(&p.evidence))) {
                out.entry(p.code.clone()).or_default().push(p.evidence.clone());
            }
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub covered: BTreeSet<Code>,
    pub uncovered: BTreeSet<Code>,
    /// Pair counts per tier over all pairs, targets or not.
    pub per_source: BTreeMap<PairSource, usize>,
}

pub fn coverage_report(pairs: &[EvidenceCodePair], targets: &BTreeSet<Code>) -> CoverageReport {
    let with_pairs: HashSet<&Code> = pairs.iter().map(|p| &p.code).collect();
    let (covered, uncovered) = targets.iter().cloned().partition(|c| with_pairs.contains(c));
    let mut per_source = BTreeMap::new();
    for p in pairs {
        *per_source.entry(p.source).or_insert(0) += 1;
    }
    CoverageReport {
        covered,
        uncovered,
        per_source,
    }
}

/// Every pair must have non-blank evidence and a code present in the
/// hierarchy.
pub fn validate_pairs(pairs: &[EvidenceCodePair], hierarchy: &CodeHierarchy) -> Result<(), ExpansionError> {
    for (i, p) in pairs.iter().enumerate() {
        if p.evidence.trim().is_empty() {
            return Err(ExpansionError::Record {
                line: i + 1,
                reason: "empty evidence".into(),
            });
        }
        if !hierarchy.contains(p.code.as_str()) {
            return Err(KbError::UnknownCode(p.code.clone()).into());
        }
    }
    Ok(())
}

/// Pair store lines sorted by (code, source, evidence).
pub fn pairs_to_jsonl(pairs: &[EvidenceCodePair]) -> String {
    let mut sorted: Vec<&EvidenceCodePair> = pairs.iter().collect();
    sorted.sort_by(|a, b| {
        (&a.code, a.source, &a.evidence, a.frequency).cmp(&(&b.code, b.source, &b.evidence, b.frequency))
    });
    sorted
        .into_iter()
        .map(|p| serde_json::to_string(p).expect("pair serializes") + "\n")
        .collect()
}

pub fn parse_pair_store(content: &str) -> Result<Vec<EvidenceCodePair>, ExpansionError> {
    let mut out = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let pair: EvidenceCodePair = serde_json::from_str(line).map_err(|e| ExpansionError::Record {
            line: idx + 1,
            reason: e.to_string(),
        })?;
        if pair.evidence.trim().is_empty() {
            return Err(ExpansionError::Record {
                line: idx + 1,
                reason: "empty evidence".into(),
            });
        }
        out.push(pair);
    }
    Ok(out)
}

/// Options for every LLM stage of the expansion.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpansionConfig {
    pub mine: MineOptions,
    pub consolidate: ConsolidateOptions,
    pub synthesis: SynthesisOptions,
}

#[derive(Debug, Default)]
pub struct SilverRun {
    pub table: CodeEvidenceTable,
    pub pairs: Vec<EvidenceCodePair>,
    /// Codes whose consolidation fell back to top candidates.
    pub fallback_codes: Vec<Code>,
    pub skipped_documents: Vec<(String, ExpansionError)>,
}

/// Mines the documents, aggregates, and consolidates per code. Index terms
/// shown during consolidation come from `gold`.
pub fn silver_stage(
    docs: &[AnnotatedDocument],
    gold: &[EvidenceCodePair],
    hierarchy: &CodeHierarchy,
    gateway: &Gateway,
    config: &ExpansionConfig,
) -> Result<SilverRun, ExpansionError> {
    let mined = mine_corpus(docs, hierarchy, gateway, &config.mine);
    let table = aggregate_evidence(&mined.tuples);
    let terms = knowledge_from_pairs([gold]);
    let (pairs, fallback_codes) = consolidate_table(&table, &terms, hierarchy, gateway, &config.consolidate)?;
    Ok(SilverRun {
        table,
        pairs,
        fallback_codes,
        skipped_documents: mined.skipped,
    })
}

/// Synthesizes for every target that gold and silver leave uncovered.
pub fn synthetic_stage(
    targets: &BTreeSet<Code>,
    gold: &[EvidenceCodePair],
    silver: &[EvidenceCodePair],
    hierarchy: &CodeHierarchy,
    gateway: &Gateway,
    config: &ExpansionConfig,
) -> Result<SynthesisRun, ExpansionError> {
    let knowledge = knowledge_from_pairs([gold, silver]);
    synthesize_all(targets, hierarchy, &knowledge, gateway, &config.synthesis)
}

#[derive(Debug)]
pub struct KnowledgeBaseRun {
    pub gold: GoldPairs,
    pub silver: SilverRun,
    pub synthesis: SynthesisRun,
    pub coverage: CoverageReport,
}

impl KnowledgeBaseRun {
    pub fn all_pairs(&self) -> Vec<EvidenceCodePair> {
        let mut out = self.gold.pairs.clone();
        out.extend(self.silver.pairs.iter().cloned());
        out.extend(self.synthesis.pairs.iter().cloned());
        out
    }
}

/// Gold, then silver, then synthetic, then coverage over `targets`.
pub fn build_knowledge_base(
    index: &[IndexEntry],
    docs: &[AnnotatedDocument],
    targets: &BTreeSet<Code>,
    hierarchy: &CodeHierarchy,
    gateway: &Gateway,
    config: &ExpansionConfig,
) -> Result<KnowledgeBaseRun, ExpansionError> {
    let gold = extract_gold_pairs(index, hierarchy);
    let silver = silver_stage(docs, &gold.pairs, hierarchy, gateway, config)?;
    let synthesis = synthetic_stage(targets, &gold.pairs, &silver.pairs, hierarchy, gateway, config)?;
    let mut run = KnowledgeBaseRun {
        gold,
        silver,
        synthesis,
        coverage: CoverageReport::default(),
    };
    run.coverage = coverage_report(&run.all_pairs(), targets);
    Ok(run)
}
