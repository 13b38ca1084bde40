#![no_main]

use libfuzzer_sys::fuzz_target;
use mplab::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = RunConfig::from_toml(text) {
            let echoed = cfg.to_toml().expect("a parsed config serializes");
            assert_eq!(RunConfig::from_toml(&echoed).expect("echo parses"), cfg);
        }
    }
});
