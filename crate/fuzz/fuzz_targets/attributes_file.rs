//! Attribute sidecar files are hand-written; the parser must handle any
//! text without panicking, and accepted attributes must come from the
//! fixed vocabulary.

#![no_main]

use libfuzzer_sys::fuzz_target;
use mtnetkit::eval::{parse_attributes, ATTRIBUTES};

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(map) = parse_attributes(text) {
            for attrs in map.values() {
                for a in attrs {
                    assert!(ATTRIBUTES.contains(&a.as_str()));
                }
            }
        }
    }
});
