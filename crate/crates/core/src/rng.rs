//! Named random sub-streams derived from one root seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Fixed stream names used across the pipeline.
pub mod stream {
    pub const DATA: &str = "data";
    pub const INIT: &str = "init";
    pub const GP: &str = "gp";
    pub const SAMPLING: &str = "sampling";
    pub const METRICS: &str = "metrics";
    pub const BATCH: &str = "batch";
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// SplitMix64 finalizer; used to spread counter-based seeds.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// RNG for the sub-stream `name` of `root`.
pub fn substream(root: u64, name: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(fnv1a(name.as_bytes()));
    rng
}

/// RNG for item `index` of the sub-stream `name`; independent of how items are scheduled.
pub fn indexed(root: u64, name: &str, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(root ^ mix64(index)));
    rng.set_stream(fnv1a(name.as_bytes()));
    rng
}
