#![no_main]

use ihoc_core::io::TrajectoryTable;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(table) = TrajectoryTable::parse(text) {
        let _ = TrajectoryTable::parse(&table.to_csv());
    }
});
