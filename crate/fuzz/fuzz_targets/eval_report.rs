#![no_main]

use libfuzzer_sys::fuzz_target;
use sidgen_core::eval::EvalReport;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(report) = EvalReport::parse_kv(text) {
            let _ = report.render_table();
            let _ = EvalReport::parse_kv(&report.to_kv());
        }
    }
});
