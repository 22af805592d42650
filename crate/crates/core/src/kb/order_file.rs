use std::collections::BTreeSet;

use super::{Code, CodeHierarchy, CodeRecord, KbError};

// Zero-based column layout of the CMS order file.
const ORDER: std::ops::Range<usize> = 0..5;
const CODE: std::ops::Range<usize> = 6..13;
const FLAG: usize = 14;
const SHORT: std::ops::Range<usize> = 16..76;
const LONG_START: usize = 77;
const SEPARATORS: [usize; 4] = [5, 13, 15, 76];

/// Parses the fixed-width CMS order file into a hierarchy.
///
/// Blank lines are skipped, `\r\n` endings and trailing padding accepted.
/// Every error carries the 1-based line number.
pub fn parse_order_file(content: &str) -> Result<CodeHierarchy, KbError> {
    let mut seen = BTreeSet::new();
    let mut records = Vec::new();
    for (idx, raw_line) in content.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw_line.strip_suffix('\r').unwrap_or(raw_line);
        if line.trim().is_empty() {
            continue;
        }
        let record = parse_line(line, line_no)?;
        if !seen.insert(record.code.clone()) {
            return Err(KbError::Duplicate {
                line: line_no,
                code: record.code,
            });
        }
        records.push(record);
    }
    Ok(CodeHierarchy::from_records(records))
}

fn parse_line(line: &str, line_no: usize) -> Result<CodeRecord, KbError> {
    let malformed = |reason: &str| KbError::Malformed {
        line: line_no,
        reason: reason.to_string(),
    };
    let chars: Vec<char> = line.chars().collect();
    if chars.len() <= FLAG {
        return Err(malformed("line too short for code and billable flag"));
    }
    for pos in SEPARATORS {
        if chars.get(pos).is_some_and(|&c| c != ' ') {
            return Err(malformed(&format!("expected a space at column {}", pos + 1)));
        }
    }
    let field = |range: std::ops::Range<usize>| -> String {
        let end = range.end.min(chars.len());
        let start = range.start.min(end);
        chars[start..end].iter().collect::<String>().trim().to_string()
    };

    let order = field(ORDER);
    if order.is_empty() || !order.bytes().all(|b| b.is_ascii_digit()) {
        return Err(malformed("order number must be digits"));
    }

    let raw_code = field(CODE);
    if raw_code.contains('.') || raw_code.contains(' ') {
        return Err(KbError::InvalidCode {
            line: line_no,
            raw: raw_code,
        });
    }
    let code = Code::parse(&raw_code).map_err(|_| KbError::InvalidCode {
        line: line_no,
        raw: raw_code.clone(),
    })?;

    let billable = match chars[FLAG] {
        '0' => false,
        '1' => true,
        other => return Err(malformed(&format!("billable flag must be 0 or 1, found {other:?}"))),
    };

    let short_description = field(SHORT);
    let long_description = field(LONG_START..chars.len());
    if long_description.is_empty() {
        return Err(malformed("missing long description"));
    }

    Ok(CodeRecord {
        code,
        short_description,
        long_description,
        billable,
        parent: None,
    })
}

/// Formats one order-file line (inverse of the parser, used for fixtures).
pub fn render_order_line(
    order: u32,
    dotless_code: &str,
    billable: bool,
    short_description: &str,
    long_description: &str,
) -> String {
    let short: String = short_description.chars().take(SHORT.len()).collect();
    format!(
        "{order:05} {dotless_code:<7} {} {short:<60} {long_description}",
        if billable { '1' } else { '0' }
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three_code_file() -> String {
        [
            render_order_line(1, "I25", false, "Chronic ischemic heart disease", "Chronic ischemic heart disease"),
            render_order_line(2, "I251", false, "Athscl heart disease of native coronary artery", "Atherosclerotic heart disease of native coronary artery"),
            render_order_line(3, "I2510", true, "Athscl heart disease of native cor art w/o ang pctrs", "Atherosclerotic heart disease of native coronary artery without angina pectoris"),
        ]
        .join("\n")
    }

    /// Independent parent oracle: scan every other code and keep the longest
    /// one whose dotless form is a proper prefix.
    fn brute_force_parent(code: &Code, all: &[Code]) -> Option<Code> {
        all.iter()
            .filter(|c| *c != code && code.dotless().starts_with(&c.dotless()))
            .max_by_key(|c| c.dotless().len())
            .cloned()
    }

    #[test]
    fn infers_parents_from_prefixes() {
        let h = parse_order_file(&three_code_file()).unwrap();
        let all: Vec<Code> = h.codes().cloned().collect();
        for code in &all {
            assert_eq!(h.parent(code.as_str()).cloned(), brute_force_parent(code, &all));
        }
        assert_eq!(h.parent("I25.10").unwrap().as_str(), "I25.1");
        assert_eq!(h.parent("I25.1").unwrap().as_str(), "I25");
        assert_eq!(h.roots().len(), 1);
        assert_eq!(h.roots()[0].as_str(), "I25");
    }

    #[test]
    fn long_description_is_verbatim() {
        let h = parse_order_file(&three_code_file()).unwrap();
        assert_eq!(
            h.long_description("I25.10"),
            Some("Atherosclerotic heart disease of native coronary artery without angina pectoris")
        );
        assert!(h.get("I25.10").unwrap().billable);
        assert!(!h.get("I25").unwrap().billable);
    }

    #[test]
    fn empty_file_is_empty_hierarchy() {
        let h = parse_order_file("").unwrap();
        assert!(h.is_empty());
        assert!(h.roots().is_empty());
        assert!(parse_order_file("\n\n").unwrap().is_empty());
    }

    #[test]
    fn accepts_crlf_and_padding() {
        let line = render_order_line(7, "D62", true, "Acute posthemorrhagic anemia", "Acute posthemorrhagic anemia");
        let h = parse_order_file(&format!("{line}   \r\n")).unwrap();
        assert_eq!(h.long_description("D62"), Some("Acute posthemorrhagic anemia"));
    }

    #[test]
    fn skipping_intermediate_levels_links_to_nearest_existing_prefix() {
        let content = [
            render_order_line(1, "I25", false, "a", "a"),
            render_order_line(2, "I25110", true, "b", "b"),
        ]
        .join("\n");
        let h = parse_order_file(&content).unwrap();
        assert_eq!(h.parent("I25.110").unwrap().as_str(), "I25");
    }

    #[test]
    fn reports_line_numbers() {
        let good = render_order_line(1, "I25", false, "a", "a");
        let cases = [
            (format!("{good}\nshort"), 2),
            (format!("{good}\n\nxxxxx I10     1 a"), 3),
            (format!("{good}\n00002 I10     7 {:<60} desc", "s"), 2),
            (format!("{good}\n00002 I10     1 {:<60} ", "s"), 2),
        ];
        for (content, line) in cases {
            match parse_order_file(&content) {
                Err(KbError::Malformed { line: got, .. }) => assert_eq!(got, line, "{content}"),
                other => panic!("{content:?} gave {other:?}"),
            }
        }
    }

    #[test]
    fn rejects_invalid_and_duplicate_codes() {
        let bad = render_order_line(1, "1234", true, "x", "x");
        assert!(matches!(parse_order_file(&bad), Err(KbError::InvalidCode { line: 1, .. })));
        let dotted = render_order_line(1, "I25.1", true, "x", "x");
        assert!(matches!(parse_order_file(&dotted), Err(KbError::InvalidCode { .. })));
        let dup = [render_order_line(1, "I10", true, "x", "x"), render_order_line(2, "I10", true, "x", "x")].join("\n");
        assert!(matches!(parse_order_file(&dup), Err(KbError::Duplicate { line: 2, .. })));
    }

    #[test]
    fn parse_is_deterministic() {
        let content = three_code_file();
        assert_eq!(parse_order_file(&content).unwrap(), parse_order_file(&content).unwrap());
    }
}
