//! Deterministic pseudo-random number generation for synthetic traces.
//!
//! The generator is SplitMix64: a 64-bit counter stepped by the golden-ratio
//! increment with a two-round multiply-xorshift finalizer. It is tiny, has a
//! single u64 of state, and is trivially reproduced in any language, which is
//! what the frozen test vectors below pin down. Streams are *forked* by
//! index, so drawing sample `i` never depends on how many draws earlier
//! samples consumed. That makes generation order-independent and safe to run
//! data-parallel.
//!
//! Invariants:
//! * `SplitMix64::new(s)` produces an identical stream for identical `s`.
//! * `fork(seed, i)` and `fork(seed, j)` produce decorrelated streams for
//!   `i != j`; forking is a pure function of `(seed, index)`.
//! * `next_unit_open` lies strictly inside (0, 1); `next_unit` in [0, 1).

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Finalizer from the SplitMix64 reference implementation.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// SplitMix64 stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Derives the sub-stream for `index` of the stream family `seed`.
    ///
    /// The seed and the index are scrambled independently before combining,
    /// so neighboring indices do not yield neighboring states.
    pub fn fork(seed: u64, index: u64) -> Self {
        let scrambled = mix64(seed) ^ mix64(index.wrapping_mul(GOLDEN_GAMMA).wrapping_add(1));
        Self::new(scrambled)
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform draw in [0, 1) with 53 bits of precision.
    #[inline]
    pub fn next_unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw strictly inside (0, 1); safe as a log argument.
    #[inline]
    pub fn next_unit_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in [lo, hi).
    #[inline]
    pub fn next_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_unit()
    }

    /// Standard normal draw via the Box-Muller transform.
    ///
    /// Consumes exactly two u64 draws, so the stream position after a call
    /// is fixed regardless of the outcome.
    pub fn next_standard_normal(&mut self) -> f64 {
        let u1 = self.next_unit_open();
        let u2 = self.next_unit();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}
