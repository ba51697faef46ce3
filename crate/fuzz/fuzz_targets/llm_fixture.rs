#![no_main]

use karpa::llm::ScriptedChatProvider;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = ScriptedChatProvider::parse(text);
});
