#![no_main]
use libfuzzer_sys::fuzz_target;
use star_campaign::scenario::{parse_campaign, parse_workload};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    // No base directory: file references fail cleanly instead of reading disk.
    let _ = parse_workload(text, None);
    if let Ok(cfg) = parse_campaign(text, None) {
        let _ = cfg.validate();
    }
});
