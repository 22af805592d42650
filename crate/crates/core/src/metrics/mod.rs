//! Code-level and evidence-level scoring.
//!
//! Code scores use set semantics per document: duplicates collapse. All
//! ratios with a zero denominator are defined as 0.

mod matching;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use matching::max_bipartite_matching;

use crate::kb::Code;
use crate::llm::{ChatRequest, Gateway, GatewayError};
use crate::templates;
use crate::text::{evidence_key, tokens};

pub const DEFAULT_SIMILARITY_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("judge output could not be parsed after a retry: {0:?}")]
    UnparseableJudge(String),
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    ratio(2.0 * p * r, p + r)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn precision(&self) -> f64 {
        ratio(self.tp as f64, (self.tp + self.fp) as f64)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp as f64, (self.tp + self.fn_) as f64)
    }

    /// 2TP / (2TP + FP + FN), equal to the harmonic mean of P and R.
    pub fn f1(&self) -> f64 {
        ratio((2 * self.tp) as f64, (2 * self.tp + self.fp + self.fn_) as f64)
    }
}

/// Which codes macro-F1 averages over.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MacroUniverse {
    /// Every code seen in any gold or predicted set.
    #[default]
    Observed,
    /// Only codes that occur in some gold set.
    GoldOnly,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CodeMetrics {
    pub micro: Confusion,
    pub micro_precision: f64,
    pub micro_recall: f64,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub per_code: BTreeMap<Code, PerCode>,
    pub document_count: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PerCode {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub f1: f64,
}

/// Scores `(gold, predicted)` code sets, one pair per document.
pub fn code_set_metrics(pairs: &[(BTreeSet<Code>, BTreeSet<Code>)], universe: MacroUniverse) -> CodeMetrics {
    let mut micro = Confusion::default();
    let mut tallies: BTreeMap<Code, Confusion> = BTreeMap::new();
    for (gold, pred) in pairs {
        for code in gold.union(pred) {
            let t = tallies.entry(code.clone()).or_default();
            match (gold.contains(code), pred.contains(code)) {
                (true, true) => {
                    t.tp += 1;
                    micro.tp += 1;
                }
                (false, true) => {
                    t.fp += 1;
                    micro.fp += 1;
                }
                (true, false) => {
                    t.fn_ += 1;
                    micro.fn_ += 1;
                }
                (false, false) => unreachable!("code comes from the union"),
            }
        }
    }
    let in_universe = |t: &Confusion| match universe {
        MacroUniverse::Observed => true,
        MacroUniverse::GoldOnly => t.tp + t.fn_ > 0,
    };
    let f1s: Vec<f64> = tallies.values().filter(|t| in_universe(t)).map(Confusion::f1).collect();
    let macro_f1 = ratio(f1s.iter().sum(), f1s.len() as f64);
    let micro_precision = micro.precision();
    let micro_recall = micro.recall();
    CodeMetrics {
        micro,
        micro_precision,
        micro_recall,
        micro_f1: harmonic(micro_precision, micro_recall),
        macro_f1,
        per_code: tallies
            .into_iter()
            .map(|(code, t)| {
                (
                    code,
                    PerCode {
                        tp: t.tp,
                        fp: t.fp,
                        fn_: t.fn_,
                        f1: t.f1(),
                    },
                )
            })
            .collect(),
        document_count: pairs.len(),
    }
}

/// Counts behind evidence recall and F1 for one document.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub human: usize,
    pub predicted: usize,
    pub matched: usize,
}

impl MatchCounts {
    pub fn new(human: usize, predicted: usize, matched: usize) -> Self {
        Self {
            human,
            predicted,
            matched,
        }
    }
}

/// Non-blank spans, deduplicated by case/whitespace-normalized text.
fn distinct_spans(spans: &[String]) -> Vec<&str> {
    let mut seen = HashSet::new();
    spans
        .iter()
        .map(|s| s.trim())
        .filter(|s| !s.is_empty() && seen.insert(evidence_key(s)))
        .collect()
}

/// Token containment: shared lowercase alphanumeric tokens over the token
/// count of the shorter span. 0 when either span has no tokens.
pub fn containment_similarity(a: &str, b: &str) -> f64 {
    let ta: HashSet<String> = tokens(a).into_iter().collect();
    let tb: HashSet<String> = tokens(b).into_iter().collect();
    let shorter = ta.len().min(tb.len());
    if shorter == 0 {
        return 0.0;
    }
    ta.intersection(&tb).count() as f64 / shorter as f64
}

/// Deterministic stand-in for the judge: a maximum one-to-one matching over
/// pairs whose containment similarity reaches `threshold`.
///
/// `threshold` is clamped into (0, 1]; NaN falls back to the default.
pub fn match_evidence_local(predicted: &[String], gold: &[String], threshold: f64) -> MatchCounts {
    let threshold = if threshold.is_nan() {
        DEFAULT_SIMILARITY_THRESHOLD
    } else {
        threshold.clamp(f64::MIN_POSITIVE, 1.0)
    };
    let pred = distinct_spans(predicted);
    let human = distinct_spans(gold);
    let adj: Vec<Vec<usize>> = pred
        .iter()
        .map(|p| {
            human
                .iter()
                .enumerate()
                .filter(|(_, h)| containment_similarity(p, h) >= threshold)
                .map(|(j, _)| j)
                .collect()
        })
        .collect();
    let matched = max_bipartite_matching(&adj, human.len()).iter().flatten().count();
    MatchCounts::new(human.len(), pred.len(), matched)
}

/// The three counts as reported by the judge, before bound enforcement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JudgeCounts {
    pub human: usize,
    pub predicted: usize,
    pub matched: usize,
}

impl JudgeCounts {
    /// Enforces `matched <= min(human, predicted)`; the flag says whether the
    /// judge had to be corrected.
    pub fn clamp(self) -> (MatchCounts, bool) {
        let bound = self.human.min(self.predicted);
        let clamped = self.matched > bound;
        (MatchCounts::new(self.human, self.predicted, self.matched.min(bound)), clamped)
    }
}

static JUDGE_LINE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?im)^[\s*\-]*(human|predicted|matched)\s+evidence\s+count\s*\**\s*:\s*\**\s*(\d+)")
        .expect("valid regex")
});

/// Reads the `- human/predicted/matched evidence count: N` lines. Returns
/// `None` unless all three are present; the first occurrence of each wins.
pub fn parse_judge_output(text: &str) -> Option<JudgeCounts> {
    let (mut human, mut predicted, mut matched) = (None, None, None);
    for cap in JUDGE_LINE.captures_iter(text) {
        let Ok(n) = cap[2].parse::<usize>() else {
            continue;
        };
        let slot = match cap[1].to_ascii_lowercase().as_str() {
            "human" => &mut human,
            "predicted" => &mut predicted,
            _ => &mut matched,
        };
        slot.get_or_insert(n);
    }
    Some(JudgeCounts {
        human: human?,
        predicted: predicted?,
        matched: matched?,
    })
}

pub fn render_judge_prompt(predicted: &[String], gold: &[String]) -> String {
    templates::JUDGE
        .render(&[("evidence", &predicted.join("\n")), ("human_evidence", &gold.join("\n"))])
        .expect("judge template slots")
        .text
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeOptions {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for JudgeOptions {
    fn default() -> Self {
        Self {
            model: "gpt-5.1".into(),
            temperature: 0.0,
            max_tokens: 256,
        }
    }
}

impl JudgeOptions {
    pub fn request(&self, prompt: String) -> ChatRequest {
        ChatRequest::new(self.model.clone(), prompt)
            .with_temperature(self.temperature)
            .with_max_tokens(self.max_tokens)
    }
}

/// LLM-judged match counts.
///
/// When either list has no non-blank span the counts are fixed (nothing can
/// match) and the gateway is not called. An unparseable verdict is retried
/// once, bypassing the cache.
pub fn match_evidence_llm(
    predicted: &[String],
    gold: &[String],
    gateway: &Gateway,
    options: &JudgeOptions,
) -> Result<MatchCounts, MetricsError> {
    let pred_n = distinct_spans(predicted).len();
    let gold_n = distinct_spans(gold).len();
    if pred_n == 0 || gold_n == 0 {
        return Ok(MatchCounts::new(gold_n, pred_n, 0));
    }
    let request = options.request(render_judge_prompt(predicted, gold));
    let first = gateway.complete(&request)?;
    let counts = match parse_judge_output(&first.text) {
        Some(c) => c,
        None => {
            let retry = gateway.complete_uncached(&request)?;
            parse_judge_output(&retry.text).ok_or(MetricsError::UnparseableJudge(retry.text))?
        }
    };
    let (counts, clamped) = counts.clamp();
    if clamped {
        tracing::warn!(?counts, "judge reported more matches than spans; clamped");
    }
    Ok(counts)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EvidenceScores {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
}

/// Micro-aggregated: recall = ΣM/ΣH, precision = ΣM/ΣP, F1 = 2ΣM/(ΣH+ΣP).
pub fn evidence_metrics(counts: &[MatchCounts]) -> EvidenceScores {
    let m: usize = counts.iter().map(|c| c.matched).sum();
    let h: usize = counts.iter().map(|c| c.human).sum();
    let p: usize = counts.iter().map(|c| c.predicted).sum();
    EvidenceScores {
        recall: ratio(m as f64, h as f64),
        precision: ratio(m as f64, p as f64),
        f1: ratio(2.0 * m as f64, (h + p) as f64),
    }
}

/// Corpus-level bundle written as the report file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub micro_precision: f64,
    pub micro_recall: f64,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub per_code: BTreeMap<Code, PerCode>,
    pub evidence_recall: f64,
    pub evidence_precision: f64,
    pub evidence_f1: f64,
    /// Documents that contributed evidence counts.
    pub evidence_document_count: usize,
    pub document_count: usize,
}

impl EvalReport {
    pub fn new(codes: CodeMetrics, evidence: &[MatchCounts]) -> Self {
        let ev = evidence_metrics(evidence);
        Self {
            micro_precision: codes.micro_precision,
            micro_recall: codes.micro_recall,
            micro_f1: codes.micro_f1,
            macro_f1: codes.macro_f1,
            per_code: codes.per_code,
            evidence_recall: ev.recall,
            evidence_precision: ev.precision,
            evidence_f1: ev.f1,
            evidence_document_count: evidence.len(),
            document_count: codes.document_count,
        }
    }

    /// Six-column table, percentages with one decimal.
    pub fn table(&self) -> String {
        let cols = [
            ("Micro-F1", self.micro_f1),
            ("Macro-F1", self.macro_f1),
            ("Recall", self.micro_recall),
            ("Precision", self.micro_precision),
            ("Evi-Recall", self.evidence_recall),
            ("Evi-F1", self.evidence_f1),
        ];
        let mut header = String::new();
        let mut row = String::new();
        for (i, (name, value)) in cols.iter().enumerate() {
            let sep = if i == 0 { "" } else { " | " };
            let cell = format!("{:.1}", value * 100.0);
            let width = name.len().max(cell.len());
            let _ = write!(header, "{sep}{name:>width$}");
            let _ = write!(row, "{sep}{cell:>width$}");
        }
        format!("{header}\n{row}\n")
    }
}
