#![no_main]
use libfuzzer_sys::fuzz_target;
use star_campaign::{Catalog, WorkloadSpec};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(catalog) = text.parse::<Catalog>() {
        let _ = catalog.check_all(&WorkloadSpec::human_default());
    }
});
