#![no_main]

use std::path::Path;

use karpa::config::PipelineConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = PipelineConfig::from_text(text, Path::new("/nonexistent")) {
        let _ = cfg.validate();
        let _ = cfg.digest();
    }
});
