//! Seed derivation for independent, reproducible randomness streams.
//!
//! Every source of randomness in a run is a ChaCha stream keyed by the run
//! seed, a domain label, and an index. Streams derived this way are stable
//! across platforms and independent of each other, so concurrent consumers
//! (per-tree builds, per-leaf noise draws) stay deterministic regardless of
//! scheduling order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

/// Derive a child seed from `(seed, domain, index)`.
pub fn derive(seed: u64, domain: &str, index: u64) -> u64 {
    let mut x = splitmix64(seed ^ fnv1a(domain.as_bytes()));
    x = splitmix64(x ^ index);
    splitmix64(x)
}

/// A ChaCha RNG keyed by `(seed, domain, index)`.
pub fn rng(seed: u64, domain: &str, index: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(derive(seed, domain, index))
}

/// Stable 64-bit hash of an arbitrary byte string, for keying streams by
/// non-numeric identity (leaf ids, account ids).
pub fn hash_bytes(bytes: &[u8]) -> u64 {
    splitmix64(fnv1a(bytes))
}
