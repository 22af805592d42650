//! Synthetic pairs for codes that gold and silver mining leave uncovered.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::silver::{clean_items, describe};
use super::{EvidenceCodePair, ExpansionError, PairSource};
use crate::kb::{Code, CodeHierarchy, KbError};
use crate::llm::{ChatRequest, Gateway};
use crate::templates;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisOptions {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Most synthetic spans kept per code.
    pub quota: usize,
    /// Most sibling codes listed in the reference block.
    pub max_siblings: usize,
    pub parallelism: usize,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self {
            model: "gpt-5.1".into(),
            temperature: 0.0,
            max_tokens: 512,
            quota: 10,
            max_siblings: 20,
            parallelism: 4,
        }
    }
}

impl SynthesisOptions {
    fn request(&self, prompt: String) -> ChatRequest {
        ChatRequest::new(self.model.clone(), prompt)
            .with_temperature(self.temperature)
            .with_max_tokens(self.max_tokens)
    }
}

/// Fills the synthesis template for `target`, with `neighbor` as the
/// covered code whose evidence is shown.
pub fn render_synthesis_prompt(
    target: &Code,
    neighbor: &Code,
    knowledge: &BTreeMap<Code, Vec<String>>,
    hierarchy: &CodeHierarchy,
    max_siblings: usize,
) -> Result<String, ExpansionError> {
    let mut reference = vec![format!("Target code: {}", describe(target, hierarchy)?)];
    match hierarchy.parent(target.as_str()) {
        Some(parent) => reference.push(format!("Parent code: {}", describe(parent, hierarchy)?)),
        None => reference.push("Parent code: None".into()),
    }
    let siblings = hierarchy.siblings(target.as_str());
    if siblings.is_empty() {
        reference.push("Sibling codes: None".into());
    } else {
        reference.push("Sibling codes:".into());
        for sib in siblings.into_iter().take(max_siblings) {
            reference.push(format!("- {}", describe(sib, hierarchy)?));
        }
    }
    reference.push(format!("Nearest covered code: {}", describe(neighbor, hierarchy)?));
    reference.push(format!("Evidence for {neighbor}:"));
    for ev in knowledge.get(neighbor).map(Vec::as_slice).unwrap_or(&[]) {
        reference.push(format!("- {ev}"));
    }
    Ok(templates::SYNTHESIS
        .render(&[("code", &describe(target, hierarchy)?), ("reference", &reference.join("\n"))])
        .expect("synthesis template slots")
        .text)
}

/// Bullet items of a synthesis completion, deduplicated, with the output
/// format placeholders (`<evidence term>`, `...`) rejected.
pub fn parse_synthesis_completion(text: &str) -> Vec<String> {
    clean_items(text)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Synthesis {
    pub target: Code,
    pub neighbor: Code,
    /// Empty when both attempts came back empty; the target is residue.
    pub pairs: Vec<EvidenceCodePair>,
    pub attempts: usize,
}

fn covered_codes(knowledge: &BTreeMap<Code, Vec<String>>) -> BTreeSet<Code> {
    knowledge
        .iter()
        .filter(|(_, ev)| !ev.is_empty())
        .map(|(c, _)| c.clone())
        .collect()
}

fn prepare(
    target: &Code,
    covered: &BTreeSet<Code>,
    knowledge: &BTreeMap<Code, Vec<String>>,
    hierarchy: &CodeHierarchy,
    options: &SynthesisOptions,
) -> Result<(Code, ChatRequest), ExpansionError> {
    if covered.contains(target) {
        return Err(ExpansionError::AlreadyCovered(target.clone()));
    }
    let neighbor = hierarchy.nearest_code(target.as_str(), covered)?;
    let prompt = render_synthesis_prompt(target, &neighbor, knowledge, hierarchy, options.max_siblings)?;
    Ok((neighbor, options.request(prompt)))
}

fn to_pairs(target: &Code, items: Vec<String>, quota: usize) -> Vec<EvidenceCodePair> {
    items
        .into_iter()
        .take(quota)
        .map(|e| EvidenceCodePair::new(e, target.clone(), PairSource::Synthetic))
        .collect()
}

/// Synthesizes pairs for one uncovered code. An empty or placeholder-only
/// completion is retried once, bypassing the cache.
pub fn synthesize_for_code(
    target: &Code,
    hierarchy: &CodeHierarchy,
    knowledge: &BTreeMap<Code, Vec<String>>,
    gateway: &Gateway,
    options: &SynthesisOptions,
) -> Result<Synthesis, ExpansionError> {
    let covered = covered_codes(knowledge);
    let (neighbor, request) = prepare(target, &covered, knowledge, hierarchy, options)?;
    let first = gateway.complete(&request)?;
    finish(target, neighbor, &request, parse_synthesis_completion(&first.text), gateway, options)
}

fn finish(
    target: &Code,
    neighbor: Code,
    request: &ChatRequest,
    items: Vec<String>,
    gateway: &Gateway,
    options: &SynthesisOptions,
) -> Result<Synthesis, ExpansionError> {
    let (items, attempts) = if items.is_empty() {
        let retry = gateway.complete_uncached(request)?;
        (parse_synthesis_completion(&retry.text), 2)
    } else {
        (items, 1)
    };
    if items.is_empty() {
        tracing::warn!(%target, "synthesis produced no evidence after a retry");
    }
    Ok(Synthesis {
        target: target.clone(),
        neighbor,
        pairs: to_pairs(target, items, options.quota),
        attempts,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SynthesisRun {
    pub pairs: Vec<EvidenceCodePair>,
    /// Targets still without evidence.
    pub residue: BTreeSet<Code>,
    /// target -> nearest covered code used as its reference.
    pub neighbors: BTreeMap<Code, Code>,
}

/// Synthesizes every target not already in `knowledge`. The knowledge is
/// fixed for the whole run, so the result does not depend on target order.
/// First attempts go out in parallel.
pub fn synthesize_all(
    targets: &BTreeSet<Code>,
    hierarchy: &CodeHierarchy,
    knowledge: &BTreeMap<Code, Vec<String>>,
    gateway: &Gateway,
    options: &SynthesisOptions,
) -> Result<SynthesisRun, ExpansionError> {
    let covered = covered_codes(knowledge);
    if covered.is_empty() && !targets.is_empty() {
        return Err(KbError::NoCandidates.into());
    }
    let mut jobs = Vec::new();
    for target in targets.iter().filter(|t| !covered.contains(*t)) {
        let (neighbor, request) = prepare(target, &covered, knowledge, hierarchy, options)?;
        jobs.push((target, neighbor, request));
    }
    let requests: Vec<ChatRequest> = jobs.iter().map(|(_, _, r)| r.clone()).collect();
    let responses = gateway.complete_many(&requests, options.parallelism);
    let mut run = SynthesisRun::default();
    for ((target, neighbor, request), response) in jobs.into_iter().zip(responses) {
        let items = parse_synthesis_completion(&response?.text);
        let done = finish(target, neighbor, &request, items, gateway, options)?;
        if done.pairs.is_empty() {
            run.residue.insert(target.clone());
        }
        run.neighbors.insert(target.clone(), done.neighbor);
        run.pairs.extend(done.pairs);
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::{parse_order_file, render_order_line};
    use crate::llm::MockTranscript;

    fn code(s: &str) -> Code {
        Code::parse(s).unwrap()
    }

    fn kb() -> CodeHierarchy {
        let lines = [
            render_order_line(1, "I251", false, "Athscl heart disease of native coronary artery", "Atherosclerotic heart disease of native coronary artery"),
            render_order_line(2, "I2510", true, "Athscl heart disease of native cor art w/o ang pctrs", "Atherosclerotic heart disease of native coronary artery without angina pectoris"),
            render_order_line(3, "I2511", false, "Athscl heart disease of native coronary artery w ang pctrs", "Atherosclerotic heart disease of native coronary artery with angina pectoris"),
        ];
        parse_order_file(&lines.join("\n")).unwrap()
    }

    fn knowledge() -> BTreeMap<Code, Vec<String>> {
        BTreeMap::from([(code("I25.10"), vec!["CAD".to_string(), "coronary artery disease".to_string()])])
    }

    fn gateway_for(target: &str, completion: &str) -> Gateway {
        let options = SynthesisOptions::default();
        let prompt = render_synthesis_prompt(&code(target), &code("I25.10"), &knowledge(), &kb(), 20).unwrap();
        let mut t = MockTranscript::new();
        t.record(&options.request(prompt), completion);
        Gateway::mock(t)
    }

    #[test]
    fn prompt_references_the_neighbor() {
        let prompt = render_synthesis_prompt(&code("I25.11"), &code("I25.10"), &knowledge(), &kb(), 20).unwrap();
        assert!(prompt.contains("assignment of the ICD-10-CM code: I25.11 - Atherosclerotic heart disease of native coronary artery with angina pectoris.\n"));
        assert!(prompt.contains(
            "Available references:\nTarget code: I25.11 - Atherosclerotic heart disease of native coronary artery with angina pectoris\n\
             Parent code: I25.1 - Atherosclerotic heart disease of native coronary artery\n\
             Sibling codes:\n- I25.10 - Atherosclerotic heart disease of native coronary artery without angina pectoris\n\
             Nearest covered code: I25.10 - Atherosclerotic heart disease of native coronary artery without angina pectoris\n\
             Evidence for I25.10:\n- CAD\n- coronary artery disease\n\nInstructions:"
        ));
    }

    #[test]
    fn pairs_carry_the_target_code() {
        let gw = gateway_for("I25.11", "- CAD with angina\n- coronary artery disease with angina pectoris");
        let s = synthesize_for_code(&code("I25.11"), &kb(), &knowledge(), &gw, &SynthesisOptions::default()).unwrap();
        assert_eq!(s.neighbor, code("I25.10"));
        assert_eq!(s.attempts, 1);
        assert_eq!(s.pairs.len(), 2);
        assert!(s.pairs.iter().all(|p| p.code == code("I25.11") && p.source == PairSource::Synthetic));
    }

    #[test]
    fn template_echo_is_residue_after_retry() {
        let gw = gateway_for("I25.11", "- <evidence term>\n- <evidence term>\n...");
        let s = synthesize_for_code(&code("I25.11"), &kb(), &knowledge(), &gw, &SynthesisOptions::default()).unwrap();
        assert!(s.pairs.is_empty());
        assert_eq!(s.attempts, 2);
        assert_eq!(gw.transport_calls(), 2);
        let run = synthesize_all(&BTreeSet::from([code("I25.11")]), &kb(), &knowledge(), &gw, &SynthesisOptions::default()).unwrap();
        assert_eq!(run.residue, BTreeSet::from([code("I25.11")]));
    }

    #[test]
    fn covered_target_is_rejected() {
        let gw = Gateway::mock(MockTranscript::new());
        let err = synthesize_for_code(&code("I25.10"), &kb(), &knowledge(), &gw, &SynthesisOptions::default());
        assert!(matches!(err, Err(ExpansionError::AlreadyCovered(_))));
        let err = synthesize_for_code(&code("I25.11"), &kb(), &BTreeMap::new(), &gw, &SynthesisOptions::default());
        assert!(matches!(err, Err(ExpansionError::Kb(KbError::NoCandidates))));
    }

    #[test]
    fn quota_limits_output() {
        let gw = gateway_for("I25.11", "- a\n- b\n- c");
        let options = SynthesisOptions { quota: 2, ..SynthesisOptions::default() };
        let s = synthesize_for_code(&code("I25.11"), &kb(), &knowledge(), &gw, &options).unwrap();
        assert_eq!(s.pairs.len(), 2);
    }
}
