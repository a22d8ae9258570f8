#![no_main]

use libfuzzer_sys::fuzz_target;
use sidgen_serve::RecommendRequest;

fuzz_target!(|data: &[u8]| {
    if let Ok(req) = RecommendRequest::parse(data) {
        assert!(req.k >= 1);
        assert!(req.user_id.is_some() || req.profile.is_some());
    }
});
