#![no_main]

use libfuzzer_sys::fuzz_target;
use sidgen_core::model::ScorerParams;

fuzz_target!(|data: &[u8]| {
    if let Ok(params) = ScorerParams::parse(data) {
        let bytes = params.to_bytes().expect("parsed checkpoint serializes");
        assert_eq!(bytes, ScorerParams::parse(&bytes).expect("round trip").to_bytes().unwrap());
    }
});
