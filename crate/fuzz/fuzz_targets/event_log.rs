#![no_main]

use libfuzzer_sys::fuzz_target;
use spancode_review::store::decode_events;

fuzz_target!(|data: &[u8]| {
    let Ok((events, intact)) = decode_events(data) else { return };
    assert!(intact <= data.len());
    assert!(intact == 0 || data[intact - 1] == b'\n');
    // The intact prefix alone decodes to the same events.
    let (again, len) = decode_events(&data[..intact]).expect("intact prefix decodes");
    assert_eq!((again, len), (events, intact));
});
