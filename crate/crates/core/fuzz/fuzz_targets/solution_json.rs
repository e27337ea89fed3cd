#![no_main]

use ihoc_core::experiment::{parse_solution_json, solution_json};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(result) = parse_solution_json(text) {
        let _ = parse_solution_json(&solution_json(&result));
    }
});
