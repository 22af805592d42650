#![no_main]

use libfuzzer_sys::fuzz_target;
use spancode_core::expansion::parse_extract_completion;
use spancode_core::Code;

fuzz_target!(|data: &str| {
    let labels: Vec<Code> = ["I25.10", "D62", "J44.9", "K21.9"].iter().map(|c| Code::parse(c).unwrap()).collect();
    if let Some(tuples) = parse_extract_completion(data, &labels) {
        assert!(tuples.iter().all(|(c, span)| labels.contains(c) && !span.trim().is_empty()));
    }
});
