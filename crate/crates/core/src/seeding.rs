//! Hierarchical seeding. Every random draw in the crate comes from a
//! generator keyed by `(root seed, stream, index)`, so results do not depend
//! on how work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub mod streams {
    pub const GLANCE_TRAIN: u64 = 1;
    pub const GLANCE_EVAL: u64 = 2;
    pub const SPEAKING_GROUP: u64 = 3;
    pub const SPEAKING_WINDOWS: u64 = 4;
    pub const INIT: u64 = 5;
    pub const TRAIN_TASK: u64 = 6;
    pub const TRAIN_NOISE: u64 = 7;
    pub const EVAL_NOISE: u64 = 8;
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(root: u64, stream: u64, index: u64) -> u64 {
    splitmix(splitmix(splitmix(root) ^ stream.rotate_left(17)) ^ index)
}

pub fn rng_for(root: u64, stream: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, stream, index))
}
