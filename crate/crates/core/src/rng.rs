//! Seeded random streams.
//!
//! Every random draw in the crate comes from a [`ChaCha8Rng`] keyed by a
//! 64-bit seed and selected by a 64-bit stream id. ChaCha is counter based,
//! so distinct stream ids under one seed are independent sequences and any
//! party holding the seed can regenerate any stream without coordination.
//!
//! Stream ids in use:
//!
//! | id                    | consumer                                  |
//! |-----------------------|-------------------------------------------|
//! | `SIGN_FLIPS`          | diagonal of the sketch sign-flip matrix   |
//! | `SAMPLE_INDICES`      | rows kept by the sketch subsampler        |
//! | `DATA`                | synthetic data generation                 |
//! | `PARTITION`           | label-shard dealing and holdout splits    |
//! | `SERVER`              | per-round client sampling                 |
//! | `MODEL_INIT`          | initial model parameters                  |
//! | `EVAL`                | fixed evaluation subsets                  |
//! | `CLIENT_BASE + k`     | mini-batch sampling of client `k`         |
//!
//! A run derives all of these from its single master seed; the sketch seed
//! broadcast to clients is the master seed itself.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub const SIGN_FLIPS: u64 = 0;
pub const SAMPLE_INDICES: u64 = 1;
pub const DATA: u64 = 2;
pub const PARTITION: u64 = 3;
pub const SERVER: u64 = 4;
pub const MODEL_INIT: u64 = 5;
pub const EVAL: u64 = 6;
pub const CLIENT_BASE: u64 = 1 << 32;

pub fn stream(seed: u64, stream_id: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

pub fn client_stream(seed: u64, client: usize) -> StreamRng {
    stream(seed, CLIENT_BASE + client as u64)
}
