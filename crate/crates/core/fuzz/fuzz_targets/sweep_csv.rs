#![no_main]

use ihoc_core::io::{parse_sweep_csv, sweep_csv};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(records) = parse_sweep_csv(text) {
        // anything accepted must survive a second trip unchanged
        let again = sweep_csv(&records);
        let reparsed = parse_sweep_csv(&again).expect("emitted csv parses");
        assert_eq!(sweep_csv(&reparsed), again);
    }
});
