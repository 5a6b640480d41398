#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // point CSV parsing must never panic on arbitrary text
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = radflow::data::parse_csv(text);
    }
});
