//! Run configurations are user-supplied JSON; parsing must yield a valid
//! config or an error, never a panic. Whatever parses must validate, and
//! must survive a serialize/parse round trip.

#![no_main]

use libfuzzer_sys::fuzz_target;
use mtnetkit::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = RunConfig::from_json(text) {
            let again = RunConfig::from_json(&cfg.to_json()).expect("round trip");
            assert_eq!(cfg, again);
        }
    }
});
