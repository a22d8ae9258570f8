#![no_main]

use libfuzzer_sys::fuzz_target;
use sidgen_core::dataset::{examples_to_bytes, parse_examples};

fuzz_target!(|data: &[u8]| {
    if let Ok(examples) = parse_examples(data) {
        let bytes = examples_to_bytes(&examples).expect("parsed examples serialize");
        assert_eq!(parse_examples(&bytes).expect("round trip"), examples);
    }
});
