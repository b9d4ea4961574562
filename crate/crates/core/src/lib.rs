//! Rate loss of finite-word-length zero-forcing crosstalk precoders.
//!
//! The crate covers the whole chain: Werner-model channels ([`channel`]),
//! the ideal and perturbed precoders and their equivalent perturbation
//! `Delta` ([`precoding`]), exact per-tone and band rate losses ([`rate`]),
//! closed-form loss bounds ([`bounds`]), word-length design rules
//! ([`design`]) and seeded Monte Carlo trials ([`monte_carlo`]).

// `!(x <= y)` is used on purpose so that NaN takes the error branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod channel;
pub mod channel_file;
pub mod design;
pub mod error;
pub mod linalg;
pub mod monte_carlo;
pub mod precoding;
pub mod rate;
pub mod report;
pub mod rng;
pub mod units;

pub use error::{Error, Result};
