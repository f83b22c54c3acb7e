//! Planning where a robot should wait for, or go looking for, a human
//! helper.
//!
//! People occurrence is modeled as a grid of Poisson rates learned with
//! Gamma posteriors ([`gridmodel`]). Wait and search actions derived from
//! the model ([`actions`]) are arranged into fallback behavior trees that
//! are scored by Markov-chain transient analysis ([`sbt`]). The planner
//! enumerates candidate trees over sampled places ([`planner`]) and the
//! simulator replays plans against Poisson arrivals ([`sim`]).

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod actions;
pub mod cli;
pub mod geom;
pub mod gridmodel;
pub mod navgrid;
pub mod planner;
pub mod sbt;
pub mod sim;

pub use geom::Point;

/// SplitMix64 finalizer; derives independent stream seeds from a master
/// seed.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
