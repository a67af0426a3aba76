#![no_main]

use epmud::harness::{parse_config, ConfigMap};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    // Any input yields a spec or an error, never a panic.
    if let Ok(spec) = parse_config(text) {
        assert!(!spec.values.is_empty());
        assert!(spec.trials_per_point >= 1);
        assert_eq!(spec.base.activity_prob.len(), spec.base.n_devices);
    }
    // The same bytes used as a command-line override.
    let mut map = ConfigMap::default();
    if map.set_pair(text).is_ok() {
        let _ = map.into_spec();
    }
});
