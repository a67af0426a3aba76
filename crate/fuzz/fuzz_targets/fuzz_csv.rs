#![no_main]

use epmud::harness::{format_csv, parse_csv};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    // Anything accepted must survive a write and re-read unchanged.
    if let Ok(rows) = parse_csv(text) {
        let again = parse_csv(&format_csv(&rows)).expect("formatted output parses");
        assert_eq!(rows.len(), again.len());
        assert!(rows.iter().zip(&again).all(|(a, b)| a.same_as(b)));
    }
});
