use serde::{Deserialize, Serialize};

use super::{Code, KbError};
use crate::text::collapse_whitespace;

/// Alphabetic Index term paired with its default code.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub term: String,
    pub code: Code,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AlphaIndex {
    pub entries: Vec<IndexEntry>,
    /// Records dropped for an invalid code shape or an empty term.
    pub skipped: usize,
}

#[derive(Deserialize)]
struct RawEntry {
    term: Option<String>,
    code: Option<String>,
}

/// Parses the flat index interchange format: one JSON object per line with
/// string fields `term` and `code`.
///
/// A record lacking either field, or a line that is not a JSON object, is a
/// hard error. Records whose code has the wrong shape (or whose term is blank)
/// are skipped and counted.
pub fn parse_alpha_index(content: &str) -> Result<AlphaIndex, KbError> {
    let mut out = AlphaIndex::default();
    for (idx, line) in content.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record_err = |reason: String| KbError::IndexRecord {
            line: line_no,
            reason,
        };
        let raw: RawEntry = serde_json::from_str(line).map_err(|e| record_err(e.to_string()))?;
        let term = raw.term.ok_or_else(|| record_err("missing field `term`".into()))?;
        let code = raw.code.ok_or_else(|| record_err("missing field `code`".into()))?;
        let term = collapse_whitespace(&term);
        let Ok(code) = Code::parse(&code) else {
            tracing::warn!(line = line_no, code = %code, "skipping index entry with invalid code");
            out.skipped += 1;
            continue;
        };
        if term.is_empty() {
            tracing::warn!(line = line_no, "skipping index entry with empty term");
            out.skipped += 1;
            continue;
        }
        out.entries.push(IndexEntry { term, code });
    }
    if out.skipped > 0 {
        tracing::info!(skipped = out.skipped, kept = out.entries.len(), "alphabetic index parsed");
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_record() {
        let idx = parse_alpha_index(r#"{"term":"Anemia","code":"D64.9"}"#).unwrap();
        assert_eq!(idx.entries.len(), 1);
        assert_eq!(idx.entries[0].term, "Anemia");
        assert_eq!(idx.entries[0].code.as_str(), "D64.9");
        assert_eq!(idx.skipped, 0);
    }

    #[test]
    fn empty_content() {
        assert!(parse_alpha_index("").unwrap().entries.is_empty());
    }

    #[test]
    fn normalizes_code_and_term_whitespace() {
        let idx = parse_alpha_index("{\"term\":\"  Anemia,\\t  chronic \",\"code\":\"D64.9 \"}").unwrap();
        assert_eq!(idx.entries[0].code.as_str(), "D64.9");
        assert_eq!(idx.entries[0].term, "Anemia, chronic");
    }

    #[test]
    fn preserves_order_and_counts_skips() {
        let content = [
            r#"{"term":"b","code":"I10"}"#,
            r#"{"term":"bad","code":"??"}"#,
            r#"{"term":"   ","code":"I10"}"#,
            r#"{"term":"a","code":"D62"}"#,
        ]
        .join("\n");
        let idx = parse_alpha_index(&content).unwrap();
        let terms: Vec<_> = idx.entries.iter().map(|e| e.term.as_str()).collect();
        assert_eq!(terms, ["b", "a"]);
        assert_eq!(idx.skipped, 2);
    }

    #[test]
    fn missing_field_is_an_error() {
        let content = "{\"term\":\"x\",\"code\":\"I10\"}\n{\"term\":\"y\"}";
        match parse_alpha_index(content) {
            Err(KbError::IndexRecord { line, reason }) => {
                assert_eq!(line, 2);
                assert!(reason.contains("code"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_alpha_index("[1,2]").is_err());
    }
}
