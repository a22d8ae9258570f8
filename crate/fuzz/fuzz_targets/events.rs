#![no_main]

use libfuzzer_sys::fuzz_target;
use sidgen_core::catalog::{events_to_bytes, parse_events};

fuzz_target!(|data: &[u8]| {
    if let Ok(events) = parse_events(data) {
        let bytes = events_to_bytes(&events).expect("parsed events serialize");
        assert_eq!(parse_events(&bytes).expect("round trip"), events);
    }
});
