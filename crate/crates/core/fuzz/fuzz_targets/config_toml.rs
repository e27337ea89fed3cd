#![no_main]

use ihoc_core::experiment::{resolve, ConfigFile, Overrides};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = ConfigFile::parse(text) {
        // resolution validates; it may reject but must not panic
        let _ = resolve(Some(&cfg), &Overrides::default());
    }
});
