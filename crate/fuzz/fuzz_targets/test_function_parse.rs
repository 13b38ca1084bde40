#![no_main]

use libfuzzer_sys::fuzz_target;
use mplab::lss::TestFunction;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(f) = text.parse::<TestFunction>() {
            let again: TestFunction = f.to_string().parse().expect("display output parses");
            assert_eq!(again, f);
            let _ = f.eval(1.0);
        }
    }
});
