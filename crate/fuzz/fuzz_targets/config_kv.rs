#![no_main]

use libfuzzer_sys::fuzz_target;

use radflow::data::Problem;
use radflow::model::ModelKind;
use radflow::train::TrainConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    // config files parse into key=value pairs, each applied to a config;
    // both stages return errors instead of panicking
    if let Ok(entries) = radflow::train::parse_key_values(text) {
        let mut cfg = TrainConfig::new(ModelKind::Rad, Problem::GridGmm, "out");
        for (k, v) in &entries {
            let _ = cfg.apply(k, v);
        }
    }
});
