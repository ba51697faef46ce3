#![no_main]

use karpa::eval::{parse_dataset, DatasetFormat};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    for format in [DatasetFormat::Simple, DatasetFormat::Webqsp, DatasetFormat::Cwq] {
        if let Ok(samples) = parse_dataset(text, format) {
            assert!(samples.iter().all(|s| !s.gold_answers.is_empty()));
        }
    }
});
