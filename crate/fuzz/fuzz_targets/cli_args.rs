#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    // whitespace-split argv; flag parsing must never panic
    let args: Vec<String> = text.split_whitespace().map(str::to_string).collect();
    let _ = radflow_cli::parse_flags(&args);
});
