//! Sequence-generator configurations are user-supplied JSON; parsing must
//! yield a validated config or an error, never a panic.

#![no_main]

use libfuzzer_sys::fuzz_target;
use mtnetkit::synth::SynthConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = SynthConfig::from_json(text) {
            // Validation already ran; the accepted config must be usable.
            assert!(cfg.frames >= 1);
            assert!(cfg.validate().is_ok());
        }
    }
});
