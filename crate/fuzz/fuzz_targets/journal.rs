#![no_main]
use libfuzzer_sys::fuzz_target;
use star_campaign::dispatcher::journal;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(parsed) = journal::parse(text) {
        if let Ok(mut state) = journal::replay(&parsed) {
            state.check().expect("replayed state is consistent");
            state.recover(state.clock_s);
            state.check().expect("recovered state is consistent");
        }
    }
});
