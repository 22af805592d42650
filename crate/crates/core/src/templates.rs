//! Literal prompt templates and a single-pass slot renderer.
//!
//! Templates are kept byte-for-byte, trailing spaces included. Slots are
//! `{name}` markers; substituted text is never rescanned, so notes that
//! contain braces or `###` lines pass through untouched.

use thiserror::Error;

/// Document-level coding prompt (evidence first, then codes). Training and
/// inference share it.
pub const DOCUMENT: Template = Template {
    name: "document",
    text: concat!(
        "Task:\n",
        "\n",
        "You are a clinical coding assistant.\n",
        "\n",
        "Your task is to analyze the provided clinical note,\n",
        "first extract all relevant clinical evidence spans that support diagnostic coding,\n",
        "and then output the corresponding ICD-10-CM codes.\n",
        "\n",
        "Example\n",
        "\n",
        "### Clinical Note:\n",
        "...\n",
        "\n",
        "### Evidence\n",
        "\n",
        "CAD  \n",
        "COPD  \n",
        "Anemia  \n",
        "\n",
        "### ICD-10-CM Codes\n",
        "\n",
        "I25.10 - Atherosclerotic heart disease of native coronary artery without angina pectoris  \n",
        "J44.9 - Chronic obstructive pulmonary disease, unspecified  \n",
        "D62 - Acute posthemorrhagic anemia  \n",
        "\n",
        "---\n",
        "\n",
        "### Clinical Note:\n",
        "{text}\n",
    ),
    slots: &["text"],
};

/// Span-level prompt: a single evidence span in, its codes out.
pub const SPAN: Template = Template {
    name: "span",
    text: concat!(
        "### Evidence:\n",
        "\n",
        "{evidence}\n",
        "\n",
        "### ICD-10-CM Codes:\n",
    ),
    slots: &["evidence"],
};

/// Code-only prompt used for the document-level code supervision ablation.
pub const CODE_ONLY: Template = Template {
    name: "code_only",
    text: concat!(
        "You are a clinical coding assistant. \n",
        "\n",
        "Your task is to analyze the provided clinical note, and then output the corresponding ICD-10-CM codes.\n",
        "\n",
        "### Clinical Note:\n",
        "{text}\n",
    ),
    slots: &["text"],
};

/// Silver mining, stage 1: verbatim evidence per labeled code.
pub const SILVER_EXTRACT: Template = Template {
    name: "silver_extract",
    text: concat!(
        "You are a professional ICD-10-CM coder.\n",
        "\n",
        "Your task is to extract the *verbatim minimal text spans* that support each ICD-10-CM code. If no explicit evidence exists in the note, output: \"No evidence found\".\n",
        "\n",
        "---\n",
        "\n",
        "Example\n",
        "\n",
        "### Clinical Note:\n",
        "...\n",
        "\n",
        "### ICD-10-CM Codes\n",
        "...\n",
        "\n",
        "\n",
        "### Evidence\n",
        "\n",
        "I25.10 - Atherosclerotic heart disease of native coronary artery without angina pectoris > CAD\n",
        "\n",
        "J44.9 - Chronic obstructive pulmonary disease, unspecified > COPD\n",
        "\n",
        "D62 - Acute posthemorrhagic anemia > Anemia\n",
        "\n",
        "---\n",
        "\n",
        "### Clinical Note\n",
        "{text}\n",
        "\n",
        "### ICD-10-CM Codes\n",
        "{diagnosis_codes}\n",
        "\n",
        "### Evidence\n",
    ),
    slots: &["text", "diagnosis_codes"],
};

/// Silver mining, stage 2: consolidate a code's evidence set.
pub const SILVER_REFINE: Template = Template {
    name: "silver_refine",
    text: concat!(
        "You are a professional ICD-10-CM coder.\n",
        "\n",
        "Your task is to update and refine the Evidence Set for the ICD-10-CM code below.\n",
        "Follow these rules:\n",
        "\n",
        "1. Only keep the **most essential** evidence that clearly supports this code.\n",
        "2. You may reference the Alphabetic Index terms, but you do not need to match them exactly.\n",
        "3. Use the **Original Evidence Set** as the base.  \n",
        "   - If the MIMIC-IV evidence contains new, meaningful, or more specific expressions, add them.  \n",
        "   - If not, keep the existing evidence unchanged.\n",
        "4. Remove duplicates and unify phrasing into **clear, concise, canonical** clinical expressions.\n",
        "5. Output the **updated Evidence Set only**, as a bullet list. No explanation.\n",
        "\n",
        "---\n",
        "\n",
        "### ICD-10-CM Code\n",
        "{code}\n",
        "\n",
        "### Alphabetic Index Term\n",
        "{alphabetic_index_term}\n",
        "\n",
        "### Original Evidence Set\n",
        "{evidence_set}\n",
        "\n",
        "### New Evidence from MIMIC-IV\n",
        "{mimiciv_evidence}\n",
        "\n",
        "### Updated Evidence Set\n",
        "- \n",
    ),
    slots: &["code", "alphabetic_index_term", "evidence_set", "mimiciv_evidence"],
};

/// Evidence synthesis for codes no gold or silver pair covers.
pub const SYNTHESIS: Template = Template {
    name: "synthesis",
    text: concat!(
        "You are a professional ICD-10-CM coding and clinical documentation expert.\n",
        "\n",
        "Your task is to synthesize a focused, audit-defensible list of clinical\n",
        "evidence terms that directly support assignment of the ICD-10-CM code: {code}.\n",
        "\n",
        "Definition of evidence:\n",
        "Evidence refers only to clinical findings or documentation elements\n",
        "that materially support the diagnosis represented by the code.\n",
        "\n",
        "Available references:\n",
        "{reference}\n",
        "\n",
        "Instructions:\n",
        "- Use the parent and sibling codes to understand diagnostic scope.\n",
        "- Infer conservatively based on ICD-10-CM conventions and real-world\n",
        "  clinical documentation patterns.\n",
        "- Prioritize diagnostic-confirmatory evidence (e.g., imaging findings,\n",
        "  explicit diagnoses, anatomical localization).\n",
        "\n",
        "Do NOT include:\n",
        "- Mechanism of injury or accident descriptions\n",
        "- General symptoms or nonspecific complaints\n",
        "- Treatment, procedures, immobilization, or care plans\n",
        "- Encounter setting or workflow details\n",
        "- Redundant negative statements unless required to distinguish code type\n",
        "\n",
        "Unspecified code rule:\n",
        "- If the code is unspecified, do NOT introduce inferred specificity\n",
        "  (e.g., displacement, fracture pattern, severity).\n",
        "\n",
        "Output constraints:\n",
        "- Consolidate overlapping or synonymous terms.\n",
        "- Stop generating new items once additional terms no longer add\n",
        "  distinct coding value.\n",
        "\n",
        "Output format:\n",
        "- <evidence term>\n",
        "- <evidence term>\n",
        "...\n",
    ),
    slots: &["code", "reference"],
};

/// Judge prompt counting one-to-one matches between evidence lists.
pub const JUDGE: Template = Template {
    name: "judge",
    text: concat!(
        "You are a clinical evidence evaluation expert.\n",
        "\n",
        "You are given two unordered sets of clinical evidence spans.\n",
        "Each line represents one evidence span.\n",
        "\n",
        "Evaluation rules:\n",
        "\n",
        "1. Count only meaningful clinical evidence spans.\n",
        "   - Ignore empty lines, headings, or formatting text.\n",
        "   - If the same evidence appears multiple times, count it only once (semantic deduplication).\n",
        "\n",
        "2. Matching is semantic and lenient:\n",
        "   - If a predicted span is more specific but clearly refers to the same clinical finding as a human span, count it as a match.\n",
        "   - Minor wording differences do not matter.\n",
        "   - Human annotations may be shorter or less specific.\n",
        "   - If findings contradict (e.g., different laterality), do NOT count as a match.\n",
        "\n",
        "3. Matching must be one-to-one.\n",
        "   - One predicted span can match at most one human span.\n",
        "   - Do not double count matches.\n",
        "   - Determine the optimal one-to-one matching that maximizes the number of matches.\n",
        "\n",
        "### Predicted Evidence:\n",
        "{evidence}\n",
        "\n",
        "### Human-annotated Evidence:\n",
        "{human_evidence}\n",
        "\n",
        "Output in markdown format exactly as:\n",
        "\n",
        "- human evidence count: X\n",
        "- predicted evidence count: Y\n",
        "- matched evidence count: Z\n",
        "\n",
    ),
    slots: &["evidence", "human_evidence"],
};

pub const ALL: [Template; 7] = [DOCUMENT, SPAN, CODE_ONLY, SILVER_EXTRACT, SILVER_REFINE, SYNTHESIS, JUDGE];

/// Header lines the prediction parser looks for.
pub const EVIDENCE_HEADER: &str = "### Evidence";
pub const CODES_HEADER: &str = "### ICD-10-CM Codes";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("template {template}: no value for slot {{{slot}}}")]
    MissingSlot { template: &'static str, slot: String },
    #[error("template {template} has no slot {{{slot}}}")]
    UnknownSlot { template: &'static str, slot: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Template {
    pub name: &'static str,
    pub text: &'static str,
    pub slots: &'static [&'static str],
}

/// A rendered prompt plus the byte offset where the first substituted value
/// begins; everything before it is fixed instruction text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rendered {
    pub text: String,
    pub body_start: usize,
}

impl Rendered {
    pub fn instruction(&self) -> &str {
        &self.text[..self.body_start]
    }

    pub fn body(&self) -> &str {
        &self.text[self.body_start..]
    }
}

impl Template {
    pub fn render(&self, values: &[(&str, &str)]) -> Result<Rendered, TemplateError> {
        for (slot, _) in values {
            if !self.slots.contains(slot) {
                return Err(TemplateError::UnknownSlot {
                    template: self.name,
                    slot: slot.to_string(),
                });
            }
        }
        let lookup = |slot: &str| values.iter().find(|(s, _)| *s == slot).map(|(_, v)| *v);
        for slot in self.slots {
            if lookup(slot).is_none() {
                return Err(TemplateError::MissingSlot {
                    template: self.name,
                    slot: slot.to_string(),
                });
            }
        }

        let mut out = String::with_capacity(self.text.len() + values.iter().map(|(_, v)| v.len()).sum::<usize>());
        let mut body_start = None;
        let mut rest = self.text;
        while let Some(open) = rest.find('{') {
            let after = &rest[open + 1..];
            let hit = after.find('}').and_then(|close| {
                let name = &after[..close];
                lookup(name).filter(|_| self.slots.contains(&name)).map(|v| (close, v))
            });
            match hit {
                Some((close, value)) => {
                    out.push_str(&rest[..open]);
                    body_start.get_or_insert(out.len());
                    out.push_str(value);
                    rest = &after[close + 1..];
                }
                None => {
                    out.push_str(&rest[..=open]);
                    rest = after;
                }
            }
        }
        out.push_str(rest);
        let body_start = body_start.unwrap_or(out.len());
        Ok(Rendered {
            text: out,
            body_start,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_slot_appears_exactly_once() {
        for t in ALL {
            for slot in t.slots {
                assert_eq!(t.text.matches(&format!("{{{slot}}}")).count(), 1, "{} {slot}", t.name);
            }
        }
    }

    #[test]
    fn substituted_values_are_not_rescanned() {
        let r = SPAN.render(&[("evidence", "{evidence} and ### Evidence")]).unwrap();
        assert_eq!(r.text, "### Evidence:\n\n{evidence} and ### Evidence\n\n### ICD-10-CM Codes:\n");
        assert_eq!(r.instruction(), "### Evidence:\n\n");
    }

    #[test]
    fn literal_braces_survive() {
        let r = SYNTHESIS.render(&[("code", "X"), ("reference", "{not a slot}")]).unwrap();
        assert!(r.text.contains("{not a slot}"));
        assert!(r.text.contains("- <evidence term>\n"));
    }

    #[test]
    fn slot_errors() {
        assert!(matches!(SPAN.render(&[]), Err(TemplateError::MissingSlot { .. })));
        assert!(matches!(
            SPAN.render(&[("evidence", "x"), ("text", "y")]),
            Err(TemplateError::UnknownSlot { .. })
        ));
    }
}
