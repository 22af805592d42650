#![no_main]

use libfuzzer_sys::fuzz_target;
use spancode_core::inference::{parse_prediction_store, prediction_store_to_jsonl};

fuzz_target!(|data: &str| {
    let Ok(preds) = parse_prediction_store(data) else { return };
    let again = parse_prediction_store(&prediction_store_to_jsonl(&preds)).expect("written store parses");
    assert_eq!(again, preds);
});
