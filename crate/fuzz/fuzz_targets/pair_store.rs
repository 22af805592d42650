#![no_main]

use libfuzzer_sys::fuzz_target;
use spancode_core::expansion::{pairs_to_jsonl, parse_pair_store};

fuzz_target!(|data: &str| {
    let Ok(pairs) = parse_pair_store(data) else { return };
    let text = pairs_to_jsonl(&pairs);
    let again = parse_pair_store(&text).expect("written store parses");
    assert_eq!(pairs_to_jsonl(&again), text);
});
