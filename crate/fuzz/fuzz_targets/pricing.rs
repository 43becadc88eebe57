#![no_main]
use libfuzzer_sys::fuzz_target;
use star_campaign::{campaign_cost, BackendKind, PricingTable, ResourceShape};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(pricing) = text.parse::<PricingTable>() {
        for kind in BackendKind::ALL {
            let shape = match kind {
                BackendKind::Vm => ResourceShape::r7a_2xlarge(),
                _ => ResourceShape::ecs_task(),
            };
            let _ = campaign_cost(kind, &shape, 207.0, 20, &pricing);
        }
    }
});
