//! Counter-based random streams. Every task derives its generator from the
//! master seed and a path of integers, so results never depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub(crate) mod tag {
    pub const TREE: u64 = 1;
    pub const FOLDS: u64 = 2;
    pub const MUTE_TRAIN: u64 = 3;
    pub const MUTE_TEST: u64 = 4;
    pub const SIM_TRAIN: u64 = 5;
    pub const SIM_TEST: u64 = 6;
    pub const CALIBRATION: u64 = 7;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for the task identified by `path` under `seed`.
pub fn stream(seed: u64, path: &[u64]) -> StreamRng {
    let id = path.iter().fold(0x243F_6A88_85A3_08D3u64, |acc, &p| splitmix(acc ^ splitmix(p)));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Derives a child seed, for handing a sub-computation its own master seed.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix(seed), |acc, &p| splitmix(acc ^ splitmix(p)))
}
