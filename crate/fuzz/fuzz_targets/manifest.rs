#![no_main]
use libfuzzer_sys::fuzz_target;
use star_campaign::workload::{parse_manifest, render_manifest};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(entries) = parse_manifest(text) {
        // Whatever parses must survive a render/parse round trip.
        let again = parse_manifest(&render_manifest(&entries)).expect("rendered manifest parses");
        assert_eq!(again.len(), entries.len());
    }
});
