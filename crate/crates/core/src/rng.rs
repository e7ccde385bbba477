//! Counter-based random streams.
//!
//! Every random draw in the toolkit comes from a stream addressed by
//! `(seed, purpose, a, b)`, typically `a = path_id` and `b = t`. Streams are
//! independent of the order in which they are requested, so parallel
//! generation gives the same numbers as sequential generation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// What a stream is used for. Distinct purposes never share draws.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Dataset = 1,
    InnerExpectation = 2,
    Greedy = 3,
    RandomStart = 4,
    Spsa = 5,
    Init = 6,
    Derm = 7,
    Model = 8,
    Minibatch = 9,
}

#[inline]
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Key for a single stream.
pub fn stream_key(seed: u64, purpose: Purpose, a: u64, b: u64) -> u64 {
    let mut k = splitmix64(seed);
    k = splitmix64(k ^ (purpose as u64).wrapping_mul(0xA24B_AED4_963E_E407));
    k = splitmix64(k ^ a.wrapping_mul(0x9FB2_1C65_1E98_DF25));
    splitmix64(k ^ b.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

pub fn stream(seed: u64, purpose: Purpose, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_key(seed, purpose, a, b))
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Symmetric Bernoulli draw in {-1, +1}.
pub fn rademacher<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    if rng.random::<bool>() {
        1.0
    } else {
        -1.0
    }
}

/// Hash of a real vector's bit pattern, used to key per-state streams.
pub fn hash_f64s(values: &[f64]) -> u64 {
    values
        .iter()
        .fold(0x51_7CC1_B727_220A, |acc, v| splitmix64(acc ^ v.to_bits()))
}
