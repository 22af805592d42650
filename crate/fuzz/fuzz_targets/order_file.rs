#![no_main]

use libfuzzer_sys::fuzz_target;
use spancode_core::kb::{parse_order_file, render_order_line};

fuzz_target!(|data: &str| {
    let Ok(kb) = parse_order_file(data) else { return };
    // Whatever parses re-renders to something that parses to the same hierarchy.
    let lines: Vec<String> = kb
        .records()
        .enumerate()
        .map(|(i, r)| render_order_line(i as u32 + 1, &r.code.dotless(), r.billable, &r.short_description, &r.long_description))
        .collect();
    let again = parse_order_file(&lines.join("\n")).expect("rendered order file parses");
    assert_eq!(again.len(), kb.len());
    for r in kb.records() {
        assert_eq!(again.parent(r.code.as_str()), r.parent.as_ref());
    }
});
