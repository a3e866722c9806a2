#![no_main]

use interdelivery::Scenario;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(scenario) = Scenario::from_json(text) else {
        return;
    };
    assert!(scenario.k() >= 1 && scenario.k() <= scenario.n());
    for c in scenario.clients() {
        assert!(c.p > 0.0 && c.p <= 1.0);
        assert!(c.weight > 0.0 && c.weight.is_finite());
        assert!(c.theta >= 0.0 && c.theta.is_finite());
    }
    let reparsed = Scenario::from_json(&scenario.to_json()).expect("serialized scenario parses");
    assert_eq!(scenario, reparsed);
});
