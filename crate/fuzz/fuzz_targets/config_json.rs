#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // Cap the document size so adversarial matrix dimensions stay small
    // enough for the dense validation checks.
    if data.len() > 4096 {
        return;
    }
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = dmhe_cli::config::ExperimentConfig::from_json(text) {
            let _ = cfg.validate();
        }
    }
});
