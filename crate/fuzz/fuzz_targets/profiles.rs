#![no_main]

use libfuzzer_sys::fuzz_target;
use sidgen_core::catalog::{parse_profiles, profiles_to_bytes};

fuzz_target!(|data: &[u8]| {
    if let Ok(profiles) = parse_profiles(data) {
        let bytes = profiles_to_bytes(&profiles).expect("parsed profiles serialize");
        assert_eq!(parse_profiles(&bytes).expect("round trip"), profiles);
    }
});
