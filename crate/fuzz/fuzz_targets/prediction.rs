#![no_main]

use std::sync::LazyLock;

use libfuzzer_sys::fuzz_target;
use spancode_core::inference::parse_prediction;
use spancode_core::kb::parse_order_file;
use spancode_core::CodeHierarchy;

static KB: LazyLock<CodeHierarchy> =
    LazyLock::new(|| parse_order_file(include_str!("../../fixtures/icd10cm_order.txt")).unwrap());

fuzz_target!(|data: &str| {
    let p = parse_prediction(data, &KB);
    assert_eq!(p.raw, data);
    assert!(p.evidence.iter().all(|e| !e.contains('\n') && !e.trim().is_empty()));
    // Unknown codes stay in the list (they score as false positives) and are flagged.
    assert!(p.codes.iter().all(|c| KB.contains(c.as_str()) || p.unknown_codes.contains(c)));
    assert!(p.unknown_codes.iter().all(|c| p.codes.contains(c)));
    assert!(p.unknown_codes.iter().all(|c| !KB.contains(c.as_str())));
});
