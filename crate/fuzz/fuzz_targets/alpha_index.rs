#![no_main]

use libfuzzer_sys::fuzz_target;
use spancode_core::kb::parse_alpha_index;

fuzz_target!(|data: &str| {
    if let Ok(index) = parse_alpha_index(data) {
        assert!(index.entries.iter().all(|e| !e.term.trim().is_empty()));
    }
});
