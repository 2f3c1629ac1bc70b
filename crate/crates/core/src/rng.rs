//! Seeded random streams.
//!
//! Every run owns one seed. Independent consumers (arrival times, model
//! assignment, load sampling) draw from named sub-streams of that seed so that
//! changing one knob never perturbs another consumer's draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Sub-stream names used by the simulator.
pub mod stream {
    pub const ARRIVALS: &str = "arrivals";
    pub const ASSIGN: &str = "assign";
    pub const LOAD: &str = "load";
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic generator for the named sub-stream of `seed`.
pub fn substream(seed: u64, name: &str) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(name.as_bytes()));
    rng
}

/// Mixes a base seed with a textual key. Stable across platforms and releases.
pub fn derive_seed(base: u64, key: &str) -> u64 {
    splitmix64(base ^ fnv1a(key.as_bytes()))
}
