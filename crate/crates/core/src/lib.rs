//! Personalized federated learning with one-bit random sketches.
//!
//! Clients train personalized models and upload only `sign(Φw)`, the sign
//! of a subsampled randomized Hadamard projection of their parameters. The
//! server returns the weighted majority vote of those signs, and each client
//! adds a smoothed penalty pulling its own sketch toward that consensus.

pub mod cli;
pub mod client;
pub mod config;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod federation;
pub mod linalg;
pub mod model;
pub mod objective;
pub mod rng;
pub mod server;
pub mod sketch;

pub use error::{Error, Result};
