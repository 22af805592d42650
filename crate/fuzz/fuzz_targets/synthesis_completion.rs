#![no_main]

use libfuzzer_sys::fuzz_target;
use spancode_core::expansion::parse_synthesis_completion;

fuzz_target!(|data: &str| {
    for item in parse_synthesis_completion(data) {
        assert!(!item.trim().is_empty() && !item.contains('\n'));
    }
});
