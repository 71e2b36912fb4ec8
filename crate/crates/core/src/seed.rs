//! Seed derivation.
//!
//! Every random stream in the crate is a `ChaCha8Rng` seeded by
//! `derive(master, stream, index)`, a splitmix64 mix of the three values.
//! Streams in use:
//!
//! | stream          | index            | used for                          |
//! |-----------------|------------------|-----------------------------------|
//! | `TOPOLOGY`      | topology number  | UE/BS placement                   |
//! | `SOLVER`        | record number    | gradient oracle random starts     |
//! | `SPLIT`         | 0                | train/test split                  |
//! | `KAN_INIT`      | 0                | network initialisation            |
//! | `KAN_SHUFFLE`   | 0                | mini-batch order                  |
//!
//! Every base station trains from the same seed, so equal data gives equal
//! networks. The CLI passes its single `--seed` as every master seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const TOPOLOGY: u64 = 1;
pub const SOLVER: u64 = 2;
pub const SPLIT: u64 = 3;
pub const KAN_INIT: u64 = 4;
pub const KAN_SHUFFLE: u64 = 5;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(master: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ stream.wrapping_mul(0xD6E8_FEB8_6659_FD93)) ^ index)
}

pub fn rng(master: u64, stream: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(master, stream, index))
}
