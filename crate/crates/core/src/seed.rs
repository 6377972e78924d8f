//! Seed derivation. Every random stream in the pipeline is keyed by
//! `(root seed, module name, unit index)`, so results never depend on
//! how work units are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Default root seed. The value is arbitrary.
pub const DEFAULT_SEED: u64 = 42;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hash `(root, module, index)` into a 64-bit seed.
pub fn derive_seed(root: u64, module: &str, index: u64) -> u64 {
    // FNV-1a over the module name, then mixed with the other two words.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in module.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    splitmix64(splitmix64(root ^ h).wrapping_add(index))
}

pub fn rng_for(root: u64, module: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, module, index))
}
