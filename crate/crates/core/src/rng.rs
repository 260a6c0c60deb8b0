//! Named random streams split from one 64-bit run seed.
//!
//! Each consumer (scenario generation, weight init, shuffling, ...) asks for
//! its own stream by name, so adding a consumer never shifts another's draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stable 64-bit FNV-1a hash of a stream name.
fn stream_id(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Generator for stream `name` under `seed`.
pub fn seeded(seed: u64, name: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(name));
    rng
}

/// Child seed for a named sub-run (e.g. the `k`-th scenario).
pub fn derive_seed(seed: u64, name: &str, index: u64) -> u64 {
    stream_id(name)
        .rotate_left(17)
        .wrapping_add(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(index.wrapping_mul(0xbf58_476d_1ce4_e5b9))
}
