#![no_main]

use ihoc_core::io::parse_vector;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(v) = parse_vector(text) {
            assert!(v.iter().all(|x| x.is_finite()));
        }
    }
});
