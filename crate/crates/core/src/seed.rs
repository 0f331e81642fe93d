//! Deterministic seed derivation.
//!
//! Every random stream in the crate is a `ChaCha8Rng` seeded from a `u64`
//! that is derived from a master seed and a path of integers. Work units
//! (trees, folds, pairs, replications) get independent streams regardless
//! of the order in which they are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `parts` into `seed`; distinct paths give (practically) independent seeds.
pub fn derive(seed: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix(seed), |acc, &p| splitmix(acc ^ splitmix(p.wrapping_add(GOLDEN))))
}

/// Stable 64-bit FNV-1a hash, used to key streams by column name.
pub fn hash_str(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Seed for the unordered variable pair `{i, j}`.
pub fn pair_seed(master: u64, i: usize, j: usize) -> u64 {
    derive(master, &[0x5041_4952, i.min(j) as u64, i.max(j) as u64])
}
