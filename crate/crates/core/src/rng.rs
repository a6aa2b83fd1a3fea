//! Seed derivation and counter-based random streams.
//!
//! Every random quantity in the crate is drawn from a ChaCha8 stream keyed by
//! the user seed and selected by a 64-bit stream id, so that a given annulus,
//! lattice site or replicate always sees the same numbers no matter in which
//! order (or on which worker) it is generated.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stream-id namespaces.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u16)]
pub enum StreamTag {
    PoissonShell = 1,
    LatticeShell = 2,
    LatticeSite = 3,
    Brw = 4,
    Replicate = 5,
    Probe = 6,
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed for replicate `index` of an experiment run with `base`.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    splitmix64(base ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

/// Hash an integer lattice site into a 64-bit counter.
pub fn site_key(site: &[i64]) -> u64 {
    site.iter().fold(0x243F_6A88_85A3_08D3_u64, |acc, &c| {
        splitmix64(acc ^ (c as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
    })
}

/// A ChaCha8 stream keyed by `seed`, selected by (`tag`, `counter`).
pub fn stream(seed: u64, tag: StreamTag, counter: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(splitmix64(((tag as u64) << 56) ^ splitmix64(counter)));
    rng
}

/// Uniform draw on (0, 1].
pub fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // 53 random bits mapped onto {1, ..., 2^53} / 2^53
    ((rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Standard exponential variate.
pub fn exp1<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    -open_unit(rng).ln()
}

/// Uniform draw on (0, 1] derived from a counter, without a stream object.
pub fn hashed_unit(seed: u64, tag: StreamTag, key: u64) -> f64 {
    let x = splitmix64(splitmix64(seed ^ ((tag as u64) << 56)) ^ key);
    ((x >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}
