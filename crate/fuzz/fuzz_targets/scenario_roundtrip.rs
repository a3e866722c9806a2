#![no_main]

use interdelivery::{ClientParams, Scenario};
use libfuzzer_sys::fuzz_target;

fn f64_at(chunk: &[u8]) -> f64 {
    f64::from_le_bytes(chunk.try_into().expect("chunk of eight bytes"))
}

fuzz_target!(|data: &[u8]| {
    let Some((&k, rest)) = data.split_first() else {
        return;
    };
    let clients: Vec<ClientParams> = rest
        .chunks_exact(24)
        .take(8)
        .filter_map(|c| ClientParams::new(f64_at(&c[0..8]), f64_at(&c[8..16]), f64_at(&c[16..24])).ok())
        .collect();
    let Ok(scenario) = Scenario::new(clients, usize::from(k)) else {
        return;
    };
    let text = scenario.to_json();
    let reparsed = Scenario::from_json(&text).expect("serialized scenario parses");
    assert_eq!(scenario, reparsed);
    assert_eq!(text, reparsed.to_json());
});
