#![no_main]

use libfuzzer_sys::fuzz_target;
use spancode_core::llm::MockTranscript;

fuzz_target!(|data: &str| {
    let Ok(t) = MockTranscript::parse(data) else { return };
    let again = MockTranscript::parse(&t.to_jsonl()).expect("written transcript parses");
    assert_eq!(again.to_jsonl(), t.to_jsonl());
});
