//! ICD-10-CM code knowledge base.
//!
//! A [`CodeHierarchy`] is built once from a CMS order file and is immutable
//! afterwards. Parent links come purely from code prefixes: the parent of
//! `I25.10` is the longest proper dotless prefix (`I251`) present in the file.

mod alpha_index;
mod code;
mod nearest;
mod order_file;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use alpha_index::{parse_alpha_index, AlphaIndex, IndexEntry};
pub use code::{Code, CodeShapeError};
pub use order_file::{parse_order_file, render_order_line};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KbError {
    #[error("line {line}: malformed order-file record: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: duplicate code {code}")]
    Duplicate { line: usize, code: Code },
    #[error("line {line}: invalid code {raw:?}")]
    InvalidCode { line: usize, raw: String },
    #[error("index line {line}: {reason}")]
    IndexRecord { line: usize, reason: String },
    #[error(transparent)]
    Shape(#[from] CodeShapeError),
    #[error("code {0} is not in the knowledge base")]
    UnknownCode(Code),
    #[error("no candidate codes to search")]
    NoCandidates,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeRecord {
    pub code: Code,
    pub short_description: String,
    pub long_description: String,
    /// Leaf/assignable flag from the order file ("1").
    pub billable: bool,
    pub parent: Option<Code>,
}

/// Whether [`CodeHierarchy::normalize`] insists on membership.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strictness {
    Strict,
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NormalizedCode {
    pub code: Code,
    /// False when the shape is valid but the hierarchy lacks the code
    /// (only possible in lenient mode).
    pub known: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeHierarchy {
    records: BTreeMap<Code, CodeRecord>,
    children: BTreeMap<Code, Vec<Code>>,
    roots: Vec<Code>,
}

impl CodeHierarchy {
    /// Links parents by longest existing dotless prefix. Records arrive with
    /// `parent` unset; duplicates have already been rejected.
    pub(crate) fn from_records(records: Vec<CodeRecord>) -> Self {
        let by_dotless: BTreeMap<String, Code> = records
            .iter()
            .map(|r| (r.code.dotless(), r.code.clone()))
            .collect();
        let mut out = CodeHierarchy::default();
        for mut record in records {
            let dotless = record.code.dotless();
            record.parent = (3..dotless.len())
                .rev()
                .find_map(|len| by_dotless.get(&dotless[..len]).cloned());
            match &record.parent {
                Some(parent) => out
                    .children
                    .entry(parent.clone())
                    .or_default()
                    .push(record.code.clone()),
                None => out.roots.push(record.code.clone()),
            }
            out.records.insert(record.code.clone(), record);
        }
        for kids in out.children.values_mut() {
            kids.sort();
        }
        out.roots.sort();
        out
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn contains(&self, code: &str) -> bool {
        self.records.contains_key(code)
    }

    pub fn get(&self, code: &str) -> Option<&CodeRecord> {
        self.records.get(code)
    }

    pub fn long_description(&self, code: &str) -> Option<&str> {
        self.get(code).map(|r| r.long_description.as_str())
    }

    pub fn parent(&self, code: &str) -> Option<&Code> {
        self.get(code).and_then(|r| r.parent.as_ref())
    }

    /// Sorted children; empty for leaves and unknown codes.
    pub fn children(&self, code: &str) -> &[Code] {
        self.children.get(code).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn roots(&self) -> &[Code] {
        &self.roots
    }

    /// Other children of the same parent (other roots for a root), sorted.
    pub fn siblings(&self, code: &str) -> Vec<&Code> {
        let pool = match self.parent(code) {
            Some(parent) => self.children(parent.as_str()),
            None if self.contains(code) => self.roots(),
            None => &[],
        };
        pool.iter().filter(|c| c.as_str() != code).collect()
    }

    /// Ancestors from the parent up to the root.
    pub fn ancestors(&self, code: &str) -> Vec<&Code> {
        let mut out = Vec::new();
        let mut cur = self.parent(code);
        while let Some(p) = cur {
            out.push(p);
            cur = self.parent(p.as_str());
        }
        out
    }

    /// Depth with roots at 1.
    pub fn depth(&self, code: &str) -> Option<usize> {
        self.contains(code).then(|| self.ancestors(code).len() + 1)
    }

    pub fn records(&self) -> impl Iterator<Item = &CodeRecord> {
        self.records.values()
    }

    pub fn codes(&self) -> impl Iterator<Item = &Code> {
        self.records.keys()
    }

    pub fn billable_codes(&self) -> impl Iterator<Item = &Code> {
        self.records.values().filter(|r| r.billable).map(|r| &r.code)
    }

    /// Canonicalizes a candidate code token.
    ///
    /// Uppercases and restores the dot. In strict mode the result must exist
    /// in the hierarchy; in lenient mode an absent code is returned with
    /// `known == false`.
    pub fn normalize(&self, raw: &str, strictness: Strictness) -> Result<NormalizedCode, KbError> {
        let code = Code::parse(raw)?;
        let known = self.contains(code.as_str());
        if !known && strictness == Strictness::Strict {
            return Err(KbError::UnknownCode(code));
        }
        Ok(NormalizedCode { code, known })
    }

    /// Set of every code in the hierarchy.
    pub fn code_set(&self) -> BTreeSet<Code> {
        self.records.keys().cloned().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn fixture() -> CodeHierarchy {
        let content = [
            render_order_line(1, "I25", false, "Chronic ischemic heart disease", "Chronic ischemic heart disease"),
            render_order_line(2, "I251", false, "Athscl heart disease of native coronary artery", "Atherosclerotic heart disease of native coronary artery"),
            render_order_line(3, "I2510", true, "Athscl heart disease of native cor art w/o ang pctrs", "Atherosclerotic heart disease of native coronary artery without angina pectoris"),
        ]
        .join("\n");
        parse_order_file(&content).unwrap()
    }

    #[test]
    fn normalize_inserts_dot_for_known_codes() {
        let h = fixture();
        let n = h.normalize("i2510", Strictness::Strict).unwrap();
        assert_eq!(n.code.as_str(), "I25.10");
        assert!(n.known);
    }

    #[test]
    fn normalize_three_character_code_has_no_dot() {
        let n = CodeHierarchy::default().normalize("D62", Strictness::Lenient).unwrap();
        assert_eq!(n.code.as_str(), "D62");
        assert!(!n.known);
    }

    #[test]
    fn normalize_rejects_bad_shape() {
        assert!(matches!(
            fixture().normalize("HELLO", Strictness::Lenient),
            Err(KbError::Shape(_))
        ));
    }

    #[test]
    fn strict_normalize_rejects_unknown() {
        assert!(matches!(
            fixture().normalize("J44.9", Strictness::Strict),
            Err(KbError::UnknownCode(_))
        ));
    }

    #[test]
    fn navigation() {
        let h = fixture();
        assert_eq!(h.roots(), &[Code::parse("I25").unwrap()]);
        assert_eq!(h.depth("I25.10"), Some(3));
        assert_eq!(
            h.ancestors("I25.10").iter().map(|c| c.as_str()).collect::<Vec<_>>(),
            ["I25.1", "I25"]
        );
        assert!(h.siblings("I25.10").is_empty());
        assert_eq!(h.billable_codes().count(), 1);
    }
}
