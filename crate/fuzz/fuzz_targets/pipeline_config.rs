#![no_main]

use libfuzzer_sys::fuzz_target;
use sidgen::PipelineConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = PipelineConfig::parse(text) {
            let _ = cfg.synth.validate();
            let _ = cfg.dataset.validate();
            let _ = cfg.decode.validate();
        }
    }
});
