#![no_main]

use libfuzzer_sys::fuzz_target;
use spancode_core::metrics::parse_judge_output;

fuzz_target!(|data: &str| {
    if let Some(counts) = parse_judge_output(data) {
        let (m, _) = counts.clamp();
        assert!(m.matched <= m.human.min(m.predicted));
    }
});
