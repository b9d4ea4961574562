//! Counter-style random streams.
//!
//! Every random quantity is addressed by `(seed, purpose, index)`: the seed
//! and purpose pick a ChaCha key, the index picks one of its 2^64 streams.
//! Draws therefore do not depend on which thread evaluates which tone or
//! trial, or in what order.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    CouplingGain = 0x4b5f_6761_696e,
    EntryPhase = 0x0070_6861_7365,
    QuantizationError = 0x0045_325f_756e_6966,
    EstimationError = 0x0045_315f_6761_7573,
}

pub fn stream(seed: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (purpose as u64).rotate_left(17));
    rng.set_stream(index);
    rng
}

/// Stream index for a `(trial, tone)` cell.
pub fn cell_index(trial: usize, tone: usize) -> u64 {
    ((trial as u64) << 32) | (tone as u64 & 0xffff_ffff)
}

/// Uniform on `[0, 1)` with 53 random bits, one `u64` per draw.
pub fn unit_uniform<R: RngCore>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform on `[-1, 1)`.
pub fn symmetric_uniform<R: RngCore>(rng: &mut R) -> f64 {
    2.0 * unit_uniform(rng) - 1.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_addressable() {
        let a: Vec<u64> = {
            let mut r = stream(7, Purpose::QuantizationError, cell_index(3, 5));
            (0..4).map(|_| r.next_u64()).collect()
        };
        let b: Vec<u64> = {
            let mut r = stream(7, Purpose::QuantizationError, cell_index(3, 5));
            (0..4).map(|_| r.next_u64()).collect()
        };
        let c: Vec<u64> = {
            let mut r = stream(7, Purpose::QuantizationError, cell_index(3, 6));
            (0..4).map(|_| r.next_u64()).collect()
        };
        let d: Vec<u64> = {
            let mut r = stream(7, Purpose::EstimationError, cell_index(3, 5));
            (0..4).map(|_| r.next_u64()).collect()
        };
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn uniform_range() {
        let mut r = stream(1, Purpose::EntryPhase, 0);
        for _ in 0..10_000 {
            let u = symmetric_uniform(&mut r);
            assert!((-1.0..1.0).contains(&u));
        }
    }
}
