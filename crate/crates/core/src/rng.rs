//! Seed derivation. Every random quantity comes from a ChaCha8 stream keyed
//! by a 64-bit seed, so results depend only on the master seed and the
//! logical position of the draw, never on thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Child seed for item `index` of purpose `tag` under `master`.
pub fn derive_seed(master: u64, index: u64, tag: u64) -> u64 {
    mix(mix(mix(master) ^ index) ^ tag.wrapping_mul(0xd6e8_feb8_6659_fd93))
}

/// Independent generator number `stream` for `seed`.
pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub const TAG_SAMPLE: u64 = 0;
pub const TAG_BOOTSTRAP: u64 = 1;
