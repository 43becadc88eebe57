#![no_main]
use libfuzzer_sys::fuzz_target;
use star_campaign::report::{self, Format};

// Covers sim-result JSON, summaries, journals and per-file CSV.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(rep) = report::load(text) {
        for format in [Format::Json, Format::Csv, Format::Table] {
            let _ = rep.render(format);
        }
    }
});
