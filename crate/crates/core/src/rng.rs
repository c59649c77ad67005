//! Keyed, splittable seeding.
//!
//! Every random draw in a run comes from a ChaCha stream whose seed is a hash of
//! a purpose tag and integer coordinates (run seed, client, fold, round, ...),
//! so streams never depend on the order in which other streams were consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 0x11,
    Batches = 0x22,
    Folds = 0x33,
    Synth = 0x44,
    Subset = 0x55,
}

/// Id used in place of a client id for server-owned parameters.
pub const SERVER: u64 = u64::MAX;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(stream: Stream, key: &[u64]) -> u64 {
    key.iter()
        .fold(splitmix(stream as u64), |acc, &k| splitmix(acc ^ splitmix(k)))
}

pub fn keyed_rng(stream: Stream, key: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(stream, key))
}
