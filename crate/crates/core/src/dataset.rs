//! Instruction samples for mixed document-level and span-level training,
//! plus the bundle an external trainer consumes.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::document::{AnnotatedDocument, DocumentError};
use crate::expansion::{EvidenceCodePair, PairSource};
use crate::kb::{Code, CodeHierarchy};
use crate::templates::{self, Rendered, CODES_HEADER, EVIDENCE_HEADER};
use crate::text::{collapse_whitespace, evidence_key, evidence_line};

pub const DATASET_FILE: &str = "dataset.jsonl";
pub const CONFIG_FILE: &str = "train_config.toml";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Document(#[from] DocumentError),
    #[error("document {doc}: code {code} has no linked evidence")]
    MissingEvidence { doc: String, code: Code },
    #[error("code {0} has no description in the knowledge base")]
    UnknownCode(Code),
    #[error("evidence text is empty")]
    EmptyEvidence,
    #[error("{origin}: no codes")]
    NoCodes { origin: String },
    #[error("no samples to emit")]
    NoSamples,
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleKind {
    Document,
    Span,
    CodeOnly,
}

/// One training example. `prompt` is the rendered template, ending where
/// generation starts; `prompt[..input_start]` is fixed instruction text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionSample {
    pub prompt: String,
    pub completion: String,
    pub kind: SampleKind,
    pub origin: String,
    pub input_start: usize,
}

impl InstructionSample {
    fn new(rendered: Rendered, completion: String, kind: SampleKind, origin: String) -> Self {
        Self {
            input_start: rendered.body_start,
            prompt: rendered.text,
            completion,
            kind,
            origin,
        }
    }

    pub fn instruction(&self) -> &str {
        &self.prompt[..self.input_start]
    }

    pub fn input(&self) -> &str {
        &self.prompt[self.input_start..]
    }
}

fn code_line(code: &Code, hierarchy: &CodeHierarchy) -> Result<String, DatasetError> {
    let desc = hierarchy
        .long_description(code.as_str())
        .ok_or_else(|| DatasetError::UnknownCode(code.clone()))?;
    Ok(format!("{code} - {desc}"))
}

fn code_block(codes: &[&Code], hierarchy: &CodeHierarchy) -> Result<String, DatasetError> {
    Ok(codes
        .iter()
        .map(|c| code_line(c, hierarchy))
        .collect::<Result<Vec<_>, _>>()?
        .join("\n"))
}

/// Evidence and code order a document sample uses: spans in note order
/// (offset, else first occurrence), normalized to single lines and
/// deduplicated; codes by their earliest span, ties by code.
pub fn ordered_targets(doc: &AnnotatedDocument) -> Result<(Vec<String>, Vec<Code>), DatasetError> {
    let mut placed = Vec::with_capacity(doc.evidence.len());
    for (i, ev) in doc.evidence.iter().enumerate() {
        if !doc.codes.contains(&ev.code) {
            return Err(DocumentError::UnlistedCode {
                doc: doc.id.clone(),
                span: ev.text.clone(),
                code: ev.code.clone(),
            }
            .into());
        }
        placed.push((doc.position_of(ev)?, i, ev));
    }
    placed.sort_by_key(|(pos, i, _)| (*pos, *i));

    let mut first_pos: BTreeMap<&Code, usize> = BTreeMap::new();
    for (pos, _, ev) in &placed {
        first_pos.entry(&ev.code).or_insert(*pos);
    }
    for code in &doc.codes {
        if !first_pos.contains_key(code) {
            return Err(DatasetError::MissingEvidence {
                doc: doc.id.clone(),
                code: code.clone(),
            });
        }
    }
    let mut codes: Vec<(&Code, usize)> = first_pos.into_iter().collect();
    codes.sort_by(|a, b| a.1.cmp(&b.1).then_with(|| a.0.cmp(b.0)));

    let mut seen = HashSet::new();
    let evidence = placed
        .iter()
        .map(|(_, _, ev)| evidence_line(&ev.text))
        .filter(|line| !line.is_empty() && seen.insert(evidence_key(line)))
        .collect();
    Ok((evidence, codes.into_iter().map(|(c, _)| c.clone()).collect()))
}

pub fn document_completion(evidence: &[String], codes: &[&Code], hierarchy: &CodeHierarchy) -> Result<String, DatasetError> {
    Ok(format!(
        "{EVIDENCE_HEADER}\n\n{}\n\n{CODES_HEADER}\n\n{}",
        evidence.join("\n"),
        code_block(codes, hierarchy)?
    ))
}

/// Note in, evidence block then code block out, in one completion.
pub fn build_doc_sample(doc: &AnnotatedDocument, hierarchy: &CodeHierarchy) -> Result<InstructionSample, DatasetError> {
    if doc.codes.is_empty() {
        return Err(DatasetError::NoCodes { origin: doc.id.clone() });
    }
    let (evidence, codes) = ordered_targets(doc)?;
    let codes: Vec<&Code> = codes.iter().collect();
    let completion = document_completion(&evidence, &codes, hierarchy)?;
    let rendered = templates::DOCUMENT.render(&[("text", &doc.text)]).expect("document template slots");
    Ok(InstructionSample::new(rendered, completion, SampleKind::Document, doc.id.clone()))
}

/// One evidence span in, its codes (sorted, deduplicated) out.
pub fn build_span_sample(
    evidence: &str,
    codes: &[Code],
    hierarchy: &CodeHierarchy,
    origin: impl Into<String>,
) -> Result<InstructionSample, DatasetError> {
    let evidence = collapse_whitespace(evidence);
    if evidence.is_empty() {
        return Err(DatasetError::EmptyEvidence);
    }
    let origin = origin.into();
    if codes.is_empty() {
        return Err(DatasetError::NoCodes { origin });
    }
    let sorted: BTreeSet<&Code> = codes.iter().collect();
    let completion = code_block(&sorted.into_iter().collect::<Vec<_>>(), hierarchy)?;
    let rendered = templates::SPAN.render(&[("evidence", &evidence)]).expect("span template slots");
    Ok(InstructionSample::new(rendered, completion, SampleKind::Span, origin))
}

/// Span samples from pairs. Pairs whose evidence normalizes to the same
/// text become one sample listing every code; origin names the tiers
/// involved, e.g. `span:gold+silver`. Output is ordered by normalized text.
pub fn build_span_samples(pairs: &[EvidenceCodePair], hierarchy: &CodeHierarchy) -> Result<Vec<InstructionSample>, DatasetError> {
    struct Group<'a> {
        surface: &'a str,
        codes: Vec<Code>,
        sources: BTreeSet<PairSource>,
    }
    let mut groups: BTreeMap<String, Group<'_>> = BTreeMap::new();
    for p in pairs {
        let key = evidence_key(&p.evidence);
        if key.is_empty() {
            return Err(DatasetError::EmptyEvidence);
        }
        let g = groups.entry(key).or_insert_with(|| Group {
            surface: &p.evidence,
            codes: Vec::new(),
            sources: BTreeSet::new(),
        });
        g.codes.push(p.code.clone());
        g.sources.insert(p.source);
    }
    groups
        .into_values()
        .map(|g| {
            let tiers: Vec<&str> = g
                .sources
                .iter()
                .map(|s| match s {
                    PairSource::Gold => "gold",
                    PairSource::Silver => "silver",
                    PairSource::Synthetic => "synthetic",
                })
                .collect();
            build_span_sample(g.surface, &g.codes, hierarchy, format!("span:{}", tiers.join("+")))
        })
        .collect()
}

/// Codes only, in the document's label order; evidence is ignored.
pub fn build_code_only_sample(doc: &AnnotatedDocument, hierarchy: &CodeHierarchy) -> Result<InstructionSample, DatasetError> {
    if doc.codes.is_empty() {
        return Err(DatasetError::NoCodes { origin: doc.id.clone() });
    }
    let mut seen = HashSet::new();
    let codes: Vec<&Code> = doc.codes.iter().filter(|c| seen.insert(*c)).collect();
    let completion = format!("{CODES_HEADER}\n\n{}", code_block(&codes, hierarchy)?);
    let rendered = templates::CODE_ONLY.render(&[("text", &doc.text)]).expect("code-only template slots");
    Ok(InstructionSample::new(rendered, completion, SampleKind::CodeOnly, doc.id.clone()))
}

/// Document samples repeated `duplication` times (0 counts as 1), then span
/// samples, then a seeded shuffle.
pub fn mix_datasets(
    doc_samples: &[InstructionSample],
    span_samples: &[InstructionSample],
    seed: u64,
    duplication: usize,
) -> Vec<InstructionSample> {
    let mut out = Vec::with_capacity(doc_samples.len() * duplication.max(1) + span_samples.len());
    for _ in 0..duplication.max(1) {
        out.extend_from_slice(doc_samples);
    }
    out.extend_from_slice(span_samples);
    out.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    out
}

/// Rows of the ablation table: each adds one training component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    /// Document-level codes only.
    CodeOnly,
    /// Document-level evidence and codes.
    Evidence,
    /// Plus gold span pairs.
    GoldSpans,
    /// Plus silver and synthetic span pairs.
    Full,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 4] = [Self::CodeOnly, Self::Evidence, Self::GoldSpans, Self::Full];

    pub fn name(self) -> &'static str {
        match self {
            Self::CodeOnly => "code_only",
            Self::Evidence => "evidence",
            Self::GoldSpans => "gold_spans",
            Self::Full => "full",
        }
    }
}

/// Builds the mixed dataset for one ablation row.
pub fn build_ablation(
    variant: AblationVariant,
    docs: &[AnnotatedDocument],
    pairs: &[EvidenceCodePair],
    hierarchy: &CodeHierarchy,
    seed: u64,
    duplication: usize,
) -> Result<Vec<InstructionSample>, DatasetError> {
    let doc_samples = docs
        .iter()
        .map(|d| match variant {
            AblationVariant::CodeOnly => build_code_only_sample(d, hierarchy),
            _ => build_doc_sample(d, hierarchy),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let span_pairs: Vec<EvidenceCodePair> = match variant {
        AblationVariant::CodeOnly | AblationVariant::Evidence => Vec::new(),
        AblationVariant::GoldSpans => pairs.iter().filter(|p| p.source == PairSource::Gold).cloned().collect(),
        AblationVariant::Full => pairs.to_vec(),
    };
    let span_samples = build_span_samples(&span_pairs, hierarchy)?;
    Ok(mix_datasets(&doc_samples, &span_samples, seed, duplication))
}

#[derive(Serialize)]
struct DatasetRecord<'a> {
    instruction: &'a str,
    input: &'a str,
    output: &'a str,
    kind: SampleKind,
    origin: &'a str,
}

pub fn samples_to_jsonl(samples: &[InstructionSample]) -> String {
    samples
        .iter()
        .map(|s| {
            let record = DatasetRecord {
                instruction: s.instruction(),
                input: s.input(),
                output: &s.completion,
                kind: s.kind,
                origin: &s.origin,
            };
            serde_json::to_string(&record).expect("record serializes") + "\n"
        })
        .collect()
}

/// Adapter fine-tuning hyperparameters handed to the external trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub adapter_rank: u32,
    pub batch_size: u32,
    pub learning_rate: f64,
    pub scheduler: String,
    pub warmup_ratio: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            adapter_rank: 8,
            batch_size: 16,
            learning_rate: 1e-4,
            scheduler: "cosine".into(),
            warmup_ratio: 0.1,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub records: usize,
    pub files: Vec<ManifestEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes the dataset, the training config and a manifest with content
/// hashes into `out_dir` (created if needed).
pub fn emit_training_bundle(samples: &[InstructionSample], out_dir: &Path, seed: u64) -> Result<Manifest, DatasetError> {
    if samples.is_empty() {
        return Err(DatasetError::NoSamples);
    }
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| DatasetError::Io { path, source }
    };
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let config = toml::to_string(&TrainConfig::with_seed(seed)).expect("config serializes");
    let mut files = Vec::new();
    for (name, content) in [(DATASET_FILE, samples_to_jsonl(samples)), (CONFIG_FILE, config)] {
        let path = out_dir.join(name);
        fs::write(&path, &content).map_err(io_err(&path))?;
        files.push(ManifestEntry {
            file: name.into(),
            sha256: sha256_hex(content.as_bytes()),
            bytes: content.len(),
        });
    }
    let manifest = Manifest {
        records: samples.len(),
        files,
    };
    let path = out_dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    fs::write(&path, text).map_err(io_err(&path))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::document::EvidenceAnnotation;
    use crate::inference::parse_prediction;
    use crate::kb::{parse_order_file, render_order_line};

    fn code(s: &str) -> Code {
        Code::parse(s).unwrap()
    }

    fn kb() -> CodeHierarchy {
        let lines = [
            render_order_line(1, "D62", true, "Acute posthemorrhagic anemia", "Acute posthemorrhagic anemia"),
            render_order_line(2, "I2510", true, "Athscl heart disease of native cor art w/o ang pctrs", "Atherosclerotic heart disease of native coronary artery without angina pectoris"),
            render_order_line(3, "J449", true, "Chronic obstructive pulmonary disease, unspecified", "Chronic obstructive pulmonary disease, unspecified"),
        ];
        parse_order_file(&lines.join("\n")).unwrap()
    }

    fn ev(text: &str, start: usize, c: &str) -> EvidenceAnnotation {
        EvidenceAnnotation { text: text.into(), start: Some(start), code: code(c) }
    }

    /// Note with CAD at 40, COPD at 90 and Anemia at 120.
    fn note_doc() -> AnnotatedDocument {
        let mut text = " ".repeat(130);
        for (s, at) in [("CAD", 40), ("COPD", 90), ("Anemia", 120)] {
            text.replace_range(at..at + s.len(), s);
        }
        AnnotatedDocument {
            id: "fx".into(),
            text,
            codes: vec![code("D62"), code("J44.9"), code("I25.10")],
            evidence: vec![ev("Anemia", 120, "D62"), ev("CAD", 40, "I25.10"), ev("COPD", 90, "J44.9")],
        }
    }

    #[test]
    fn document_sample_follows_note_order() {
        let s = build_doc_sample(&note_doc(), &kb()).unwrap();
        assert_eq!(
            s.completion,
            "### Evidence\n\nCAD\nCOPD\nAnemia\n\n### ICD-10-CM Codes\n\n\
             I25.10 - Atherosclerotic heart disease of native coronary artery without angina pectoris\n\
             J44.9 - Chronic obstructive pulmonary disease, unspecified\n\
             D62 - Acute posthemorrhagic anemia"
        );
        assert!(s.prompt.ends_with(&format!("---\n\n### Clinical Note:\n{}\n", note_doc().text)));
        assert_eq!(format!("{}{}", s.instruction(), s.input()), s.prompt);
        let parsed = parse_prediction(&s.completion, &kb());
        assert_eq!(parsed.evidence, ["CAD", "COPD", "Anemia"]);
        assert_eq!(parsed.codes, [code("I25.10"), code("J44.9"), code("D62")]);
    }

    #[test]
    fn shared_code_appears_once_at_earliest_span() {
        let mut d = note_doc();
        d.text.replace_range(10..16, "anemic");
        d.evidence.push(ev("anemic", 10, "D62"));
        let (evidence, codes) = ordered_targets(&d).unwrap();
        assert_eq!(evidence, ["anemic", "CAD", "COPD", "Anemia"]);
        assert_eq!(codes, [code("D62"), code("I25.10"), code("J44.9")]);
    }

    #[test]
    fn swapping_offsets_reverses_order() {
        let mut d = note_doc();
        let mut text = " ".repeat(130);
        text.replace_range(40..46, "Anemia");
        text.replace_range(90..94, "COPD");
        text.replace_range(120..123, "CAD");
        d.text = text;
        d.evidence = vec![ev("Anemia", 40, "D62"), ev("CAD", 120, "I25.10"), ev("COPD", 90, "J44.9")];
        let (evidence, codes) = ordered_targets(&d).unwrap();
        assert_eq!(evidence, ["Anemia", "COPD", "CAD"]);
        assert_eq!(codes, [code("D62"), code("J44.9"), code("I25.10")]);
    }

    #[test]
    fn document_sample_errors() {
        let mut d = note_doc();
        d.evidence.retain(|e| e.code != code("J44.9"));
        assert!(matches!(build_doc_sample(&d, &kb()), Err(DatasetError::MissingEvidence { .. })));
        let mut d = note_doc();
        d.evidence[0].start = None;
        d.evidence[0].text = "Pneumonia".into();
        assert!(matches!(build_doc_sample(&d, &kb()), Err(DatasetError::Document(DocumentError::SpanNotFound { .. }))));
        let mut d = note_doc();
        d.codes.push(code("Z99.89"));
        d.text.replace_range(0..3, "dep");
        d.evidence.push(ev("dep", 0, "Z99.89"));
        assert!(matches!(build_doc_sample(&d, &kb()), Err(DatasetError::UnknownCode(_))));
    }

    #[test]
    fn span_samples() {
        let s = build_span_sample("Anemia", &[code("D62")], &kb(), "span:gold").unwrap();
        assert_eq!(s.completion, "D62 - Acute posthemorrhagic anemia");
        assert_eq!(s.prompt, "### Evidence:\n\nAnemia\n\n### ICD-10-CM Codes:\n");
        assert_eq!(s.instruction(), "### Evidence:\n\n");
        let two = build_span_sample("x", &[code("I25.10"), code("D62")], &kb(), "o").unwrap();
        assert!(two.completion.starts_with("D62 - ") && two.completion.contains("\nI25.10 - "));
        assert!(matches!(build_span_sample("  ", &[code("D62")], &kb(), "o"), Err(DatasetError::EmptyEvidence)));
        assert!(matches!(build_span_sample("x", &[], &kb(), "o"), Err(DatasetError::NoCodes { .. })));
    }

    #[test]
    fn span_pairs_group_by_text() {
        let pairs = vec![
            EvidenceCodePair::new("Anemia", code("D62"), PairSource::Gold),
            EvidenceCodePair::new("anemia", code("I25.10"), PairSource::Silver),
            EvidenceCodePair::new("COPD", code("J44.9"), PairSource::Synthetic),
        ];
        let samples = build_span_samples(&pairs, &kb()).unwrap();
        assert_eq!(samples.len(), 2);
        assert_eq!(samples[0].origin, "span:gold+silver");
        assert_eq!(samples[0].completion.lines().count(), 2);
        assert_eq!(samples[1].origin, "span:synthetic");
    }

    #[test]
    fn code_only_sample() {
        let mut d = note_doc();
        d.codes = vec![code("I25.10"), code("D62")];
        d.evidence.clear();
        let s = build_code_only_sample(&d, &kb()).unwrap();
        assert_eq!(
            s.completion,
            "### ICD-10-CM Codes\n\nI25.10 - Atherosclerotic heart disease of native coronary artery without angina pectoris\nD62 - Acute posthemorrhagic anemia"
        );
        assert!(!s.completion.contains(EVIDENCE_HEADER));
        d.codes.clear();
        assert!(matches!(build_code_only_sample(&d, &kb()), Err(DatasetError::NoCodes { .. })));
    }

    fn dummy(n: usize, kind: SampleKind) -> Vec<InstructionSample> {
        (0..n)
            .map(|i| InstructionSample {
                prompt: format!("p{i}"),
                completion: "c".into(),
                kind,
                origin: format!("{kind:?}{i}"),
                input_start: 0,
            })
            .collect()
    }

    #[test]
    fn mixing_counts_and_determinism() {
        let docs = dummy(2, SampleKind::Document);
        let spans = dummy(3, SampleKind::Span);
        let a = mix_datasets(&docs, &spans, 7, 1);
        assert_eq!(a.len(), 5);
        assert_eq!(a, mix_datasets(&docs, &spans, 7, 1));
        assert_eq!(mix_datasets(&docs, &[], 7, 3).len(), 6);
        let ten = dummy(10, SampleKind::Span);
        let one = mix_datasets(&[], &ten, 1, 1);
        let two = mix_datasets(&[], &ten, 2, 1);
        assert_ne!(one, two);
        let sorted = |v: &[InstructionSample]| {
            let mut o: Vec<String> = v.iter().map(|s| s.origin.clone()).collect();
            o.sort();
            o
        };
        assert_eq!(sorted(&one), sorted(&two));
    }

    #[test]
    fn bundle_files_and_hashes() {
        let dir = tempfile::tempdir().unwrap();
        let samples = dummy(5, SampleKind::Span);
        let m = emit_training_bundle(&samples, dir.path(), 42).unwrap();
        assert_eq!(m.records, 5);
        let data = fs::read_to_string(dir.path().join(DATASET_FILE)).unwrap();
        assert_eq!(data.lines().count(), 5);
        let config: TrainConfig = toml::from_str(&fs::read_to_string(dir.path().join(CONFIG_FILE)).unwrap()).unwrap();
        assert_eq!(config, TrainConfig::with_seed(42));
        assert_eq!((config.adapter_rank, config.batch_size, config.learning_rate, config.warmup_ratio), (8, 16, 1e-4, 0.1));
        let again = tempfile::tempdir().unwrap();
        assert_eq!(emit_training_bundle(&samples, again.path(), 42).unwrap(), m);
        assert!(matches!(emit_training_bundle(&[], dir.path(), 42), Err(DatasetError::NoSamples)));
        let blocker = dir.path().join("file");
        fs::write(&blocker, "x").unwrap();
        assert!(matches!(emit_training_bundle(&samples, &blocker.join("sub"), 42), Err(DatasetError::Io { .. })));
    }
}
