#![no_main]

use libfuzzer_sys::fuzz_target;
use spancode_core::document::{documents_to_jsonl, parse_documents};

fuzz_target!(|data: &str| {
    let Ok(docs) = parse_documents(data) else { return };
    let again = parse_documents(&documents_to_jsonl(&docs)).expect("serialized documents parse");
    assert_eq!(again, docs);
    for doc in &docs {
        for ev in &doc.evidence {
            doc.position_of(ev).expect("validated span has a position");
        }
    }
});
