#![no_main]

use std::collections::HashSet;

use libfuzzer_sys::fuzz_target;
use sidgen_core::LookupTable;

fuzz_target!(|data: &[u8]| {
    if let Ok(table) = LookupTable::parse(data) {
        let trie = table.trie();
        for sid in table.groups().keys() {
            for level in 0..sid.len() {
                assert!(trie.allowed(&sid.codes()[..level]).contains(&sid.codes()[level]));
            }
            assert!(table.resolve(sid, |_| true, &HashSet::new()).is_some());
        }
    }
});
