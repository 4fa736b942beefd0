//! The binary RGB image decoder must reject arbitrary bytes with an error,
//! never a panic, out-of-bounds read, or runaway allocation.

#![no_main]

use libfuzzer_sys::fuzz_target;
use mtnetkit::pnm::Pnm;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = Pnm::decode_ppm(data) {
        // Anything that decodes must survive the round trip.
        let bytes = img.encode();
        let again = Pnm::decode_ppm(&bytes).expect("re-decoding an encoded image");
        assert_eq!(img, again);
    }
});
