//! Seeded randomness.
//!
//! Every run has a single seed. Components draw from their own ChaCha stream so
//! that adding a consumer never shifts the numbers another one sees.

use rand::{Rng, SeedableRng};
pub use rand_chacha::ChaCha8Rng as RunRng;

/// Fixed stream ids. Never renumber these: results depend on them.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const HEAD_INIT: u64 = 2;
    pub const MAIN_ORDER: u64 = 3;
    pub const AUX_SAMPLE: u64 = 4;
    pub const BATCH_SHUFFLE: u64 = 5;
    pub const DROPOUT: u64 = 6;
    pub const MLM_MASK: u64 = 7;
    pub const PROBE: u64 = 8;
    pub const SYNTH: u64 = 9;
    pub const CORPUS_ORDER: u64 = 10;
}

pub fn sub_rng(seed: u64, stream: u64) -> RunRng {
    let mut rng = RunRng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Box-Muller standard normal draw.
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // u1 in (0, 1] so the log is finite
    let u1 = 1.0 - rng.gen::<f64>();
    let u2 = rng.gen::<f64>();
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2)
}
