#![no_main]

use karpa::kg::KnowledgeGraph;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(kg) = KnowledgeGraph::load_str(text) else { return };
    // the dump is itself a loadable triple file describing the same graph
    let again = KnowledgeGraph::load_str(&kg.dump_string()).expect("dump reloads");
    assert_eq!(again.triple_count(), kg.triple_count());
    assert_eq!(again.entity_count(), kg.entity_count());
});
