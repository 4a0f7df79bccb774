#![no_main]

use condexit::config::parse_config;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(config) = parse_config(text) {
        let canonical = config.to_canonical_json();
        let again = parse_config(&canonical).expect("canonical form parses");
        assert_eq!(again, config);
        assert_eq!(again.hash(), config.hash());
    }
});
