//! Seeded PRNG used for every weight draw in the toolkit.
//!
//! SplitMix64 core with derived helpers. All outputs are computed with
//! integer arithmetic plus IEEE-754 add/sub/mul only, so an identical seed
//! produces an identical stream on every platform.

/// SplitMix64 generator.
///
/// One step: add the golden-gamma constant, then two xor-multiply mixes.
#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { state: seed }
    }

    /// Next raw 64-bit output.
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1), 53-bit resolution.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Integer in [0, n). Rejection-free modulo is fine here: n is always
    /// tiny compared to 2^64 so the bias is far below any tolerance in use.
    pub fn next_below(&mut self, n: u64) -> u64 {
        self.next_u64() % n.max(1)
    }

    /// Approximately standard-normal draw: Irwin-Hall sum of 12 uniforms
    /// minus 6 (mean 0, variance 1, support [-6, 6]). Uses only add/sub so
    /// the stream stays bit-reproducible across platforms, unlike
    /// transcendental-based transforms.
    pub fn next_gaussian(&mut self) -> f64 {
        let mut acc = 0.0;
        for _ in 0..12 {
            acc += self.next_f64();
        }
        acc - 6.0
    }

    /// Gaussian with the given standard deviation.
    pub fn gaussian(&mut self, std: f64) -> f64 {
        self.next_gaussian() * std
    }

    /// Child generator with an independent-looking stream, for giving each
    /// weight bundle its own seed without coordinating draw order.
    pub fn fork(&mut self, tag: u64) -> Rng {
        let base = self.next_u64();
        Rng::new(base ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }
}
