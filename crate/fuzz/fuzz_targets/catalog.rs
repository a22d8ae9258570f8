#![no_main]

use libfuzzer_sys::fuzz_target;
use sidgen_core::catalog::{catalog_to_bytes, parse_catalog};

fuzz_target!(|data: &[u8]| {
    if let Ok(episodes) = parse_catalog(data) {
        let bytes = catalog_to_bytes(&episodes).expect("parsed catalog serializes");
        assert_eq!(parse_catalog(&bytes).expect("round trip"), episodes);
    }
});
