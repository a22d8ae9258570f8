#![no_main]

use libfuzzer_sys::fuzz_target;
use sidgen_core::Codebook;

fuzz_target!(|data: &[u8]| {
    if let Ok(cb) = Codebook::parse(data) {
        let bytes = cb.to_bytes().expect("parsed codebook serializes");
        assert_eq!(Codebook::parse(&bytes).expect("round trip"), cb);
        // encoding the first centroid must succeed on any valid codebook
        let x = cb.centroid(0, 0).to_vec();
        let sid = cb.encode(&x).expect("encode");
        cb.reconstruct(&sid).expect("reconstruct");
    }
});
