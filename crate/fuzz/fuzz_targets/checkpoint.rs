#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // checkpoint loading must reject anything malformed without panicking
    // or allocating absurd amounts from a forged header
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = radflow::train::parse_checkpoint(text);
    }
});
