//! Evidence-based ICD-10-CM coding toolkit.
//!
//! * [`kb`]: order-file and Alphabetic Index parsing, code hierarchy.
//! * [`expansion`]: gold, silver and synthetic evidence–code pairs.
//! * [`dataset`]: document- and span-level instruction samples.
//! * [`inference`]: prompts and completion parsing.
//! * [`metrics`]: code F1 and one-to-one evidence matching.

pub mod dataset;
pub mod document;
pub mod expansion;
pub mod inference;
pub mod kb;
pub mod metrics;
pub mod templates;
pub mod text;

pub use document::{AnnotatedDocument, DocumentError, EvidenceAnnotation};
pub use kb::{Code, CodeHierarchy, CodeRecord, IndexEntry, KbError, Strictness};
pub use spancode_llm as llm;
