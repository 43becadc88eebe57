#![no_main]
use libfuzzer_sys::fuzz_target;
use star_campaign::catalog::{parse_quantity, Dimension};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    for dim in [Dimension::Duration, Dimension::Size] {
        if let Ok(limit) = parse_quantity(text, dim) {
            let _ = limit.admits(1.0);
        }
    }
});
