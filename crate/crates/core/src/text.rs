//! Small text helpers shared by the parsers.

use std::sync::LazyLock;

use regex::Regex;

/// Letter, digit, alphanumeric, then an optional extension with or without
/// its dot. The digit in second position keeps three-letter words ("the",
/// "CAD") out of the scan.
pub(crate) static CODE_TOKEN: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\b[A-Za-z][0-9][0-9A-Za-z](?:\.[0-9A-Za-z]{1,4}|[0-9A-Za-z]{1,4})?\b").expect("valid regex")
});

/// Trims and collapses every whitespace run to a single space.
pub fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Dedup key for evidence: lowercase plus whitespace collapse. No stemming,
/// so clinical surface forms stay distinct.
pub fn evidence_key(s: &str) -> String {
    collapse_whitespace(s).to_lowercase()
}

/// Strips one leading list marker: `-`, `*`, `+`, `•`, or `1.` / `1)`.
pub fn strip_list_marker(line: &str) -> &str {
    let t = line.trim_start();
    for marker in ['-', '*', '+', '•'] {
        if let Some(rest) = t.strip_prefix(marker) {
            if rest.is_empty() || rest.starts_with(char::is_whitespace) {
                return rest.trim_start();
            }
        }
    }
    let digits = t.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 && digits < t.len() {
        let rest = &t[digits..];
        if let Some(after) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            if after.is_empty() || after.starts_with(char::is_whitespace) {
                return after.trim_start();
            }
        }
    }
    t
}

/// A span as it must appear on its own completion line: list markers
/// stripped until none remain, whitespace collapsed. The prediction parser
/// reads such a line back unchanged.
pub fn evidence_line(span: &str) -> String {
    let mut cur = span.trim();
    loop {
        let next = strip_list_marker(cur).trim();
        if next == cur {
            return collapse_whitespace(cur);
        }
        cur = next;
    }
}

/// Items of a bullet list completion, in order, markers stripped, blank
/// items dropped. Lines without a marker are kept as items too, since the
/// first item often follows a prefilled `- ` in the prompt.
pub fn bullet_items(completion: &str) -> Vec<String> {
    completion
        .lines()
        .map(|l| collapse_whitespace(strip_list_marker(l)))
        .filter(|l| !l.is_empty())
        .collect()
}

/// Lowercase alphanumeric tokens.
pub fn tokens(s: &str) -> Vec<String> {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn markers() {
        assert_eq!(strip_list_marker("- CAD"), "CAD");
        assert_eq!(strip_list_marker("  * COPD"), "COPD");
        assert_eq!(strip_list_marker("• x"), "x");
        assert_eq!(strip_list_marker("12. item"), "item");
        assert_eq!(strip_list_marker("3) item"), "item");
        assert_eq!(strip_list_marker("-"), "");
        assert_eq!(strip_list_marker("-5 mg"), "-5 mg");
        assert_eq!(strip_list_marker("2.5 mg"), "2.5 mg");
        assert_eq!(strip_list_marker("CAD"), "CAD");
    }

    #[test]
    fn evidence_lines_are_marker_free() {
        assert_eq!(evidence_line("- - CAD"), "CAD");
        assert_eq!(evidence_line("  1. chest\n pain "), "chest pain");
        assert_eq!(evidence_line("-"), "");
        assert_eq!(evidence_line("2.5 mg"), "2.5 mg");
    }

    #[test]
    fn bullets() {
        assert_eq!(bullet_items("- CAD\n- coronary artery disease"), ["CAD", "coronary artery disease"]);
        assert_eq!(bullet_items("CAD\n\n-   \n- x  y"), ["CAD", "x y"]);
    }

    #[test]
    fn keys_and_tokens() {
        assert_eq!(evidence_key("  Left   KNEE pain "), "left knee pain");
        assert_eq!(tokens("Left knee-pain, 3x"), ["left", "knee", "pain", "3x"]);
    }
}
