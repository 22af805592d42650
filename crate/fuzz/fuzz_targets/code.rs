#![no_main]

use libfuzzer_sys::fuzz_target;
use spancode_core::Code;

fuzz_target!(|data: &str| {
    if let Ok(code) = Code::parse(data) {
        assert_eq!(Code::parse(code.as_str()).unwrap(), code);
        assert_eq!(Code::parse(&code.dotless()).unwrap(), code);
    }
});
