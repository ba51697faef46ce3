#![no_main]

use karpa::reasoner::parse_answers;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let set = parse_answers(text);
    assert!(set.texts().all(|a| !a.trim().is_empty()));
    let _ = set.render();
});
