#![no_main]

use karpa::planner::parse_path_sets;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(set) = parse_path_sets(text) {
        for (len, paths) in &set.by_length {
            assert!(paths.iter().all(|p| p.len() == *len && p.labels().iter().all(|l| !l.is_empty())));
        }
        let _ = set.render();
    }
});
