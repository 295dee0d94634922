//! Seed tree. Every random draw in a run comes from a ChaCha stream whose
//! seed is derived from `(master, stream, index, round)`, so changing one
//! knob (say the mask criterion) never perturbs unrelated randomness such as
//! data partitioning or minibatch order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Data = 1,
    ModelInit = 2,
    ClientTrain = 3,
    ClientMask = 4,
    Participation = 5,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, stream: Stream, index: u64, round: u64) -> u64 {
    [stream as u64, index, round]
        .into_iter()
        .fold(splitmix64(master), |acc, v| splitmix64(acc ^ splitmix64(v)))
}

pub fn stream_rng(master: u64, stream: Stream, index: u64, round: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, stream, index, round))
}
