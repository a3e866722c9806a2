#![no_main]

use interdelivery_cli::sweep::SweepSpec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(spec) = SweepSpec::from_json(text) else {
        return;
    };
    for &value in &spec.values {
        spec.scenario_at(value).expect("validated sweep values build scenarios");
    }
    let serialized = serde_json::to_string(&spec).expect("sweep spec serializes");
    let reparsed = SweepSpec::from_json(&serialized).expect("serialized sweep spec parses");
    assert_eq!(spec, reparsed);
});
