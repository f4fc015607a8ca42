//! Seed derivation and the deterministic generator used throughout the crate.
//!
//! Every random decision flows from a single root seed. Subsystems derive
//! their own streams with [`derive_seed`], which hashes `(seed, tag, extras)`
//! with FNV-1a so the streams are stable across runs, platforms, and
//! iteration-order changes.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used for all stochastic choices in the core.
pub type Rng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a over a byte slice, used as a stable, portable hash.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn fnv1a_extend(mut h: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Derive a subsystem seed from the root seed, a tag, and optional indices.
pub fn derive_seed(root: u64, tag: &str, extras: &[u64]) -> u64 {
    let mut h = fnv1a(&root.to_le_bytes());
    h = fnv1a_extend(h, tag.as_bytes());
    for &e in extras {
        h = fnv1a_extend(h, &e.to_le_bytes());
    }
    h
}

/// Construct the generator for `(root, tag, extras)`.
pub fn stream(root: u64, tag: &str, extras: &[u64]) -> Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, tag, extras))
}
