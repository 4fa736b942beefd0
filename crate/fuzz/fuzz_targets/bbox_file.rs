//! Ground-truth and result files come from outside the toolkit; the parser
//! must turn any text into boxes or an error, never a panic.

#![no_main]

use libfuzzer_sys::fuzz_target;
use mtnetkit::eval::parse_box_file;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(boxes) = parse_box_file(text) {
            // Parsed boxes carry only finite numbers.
            for b in &boxes {
                assert!(b.x.is_finite() && b.y.is_finite() && b.w.is_finite() && b.h.is_finite());
            }
        }
    }
});
