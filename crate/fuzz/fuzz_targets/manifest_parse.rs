#![no_main]

use libfuzzer_sys::fuzz_target;
use mplab::config::Manifest;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(m) = Manifest::from_json(text) {
            let echoed = m.to_json().expect("a parsed manifest serializes");
            assert_eq!(Manifest::from_json(&echoed).expect("echo parses"), m);
        }
    }
});
