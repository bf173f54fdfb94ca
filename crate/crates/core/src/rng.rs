//! Deterministic stream derivation.
//!
//! Every random decision in the engine (weight init, dropout masks, batch
//! shuffling, dataset splits, sweep-cell seeds) draws from its own ChaCha
//! stream, derived from the run seed and a stable text label. Streams are
//! independent: consuming one never shifts another, so ablating a component
//! leaves the remaining streams bitwise unchanged.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a 64-bit hash; stable, dependency-free fingerprint for labels,
/// sweep-cell coordinates, and config hashing.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derives a child seed from a base seed and a label.
pub fn derive_seed(base: u64, label: &str) -> u64 {
    let mut buf = Vec::with_capacity(8 + label.len());
    buf.extend_from_slice(&base.to_le_bytes());
    buf.extend_from_slice(label.as_bytes());
    fnv1a64(&buf)
}

/// A named ChaCha stream for the given base seed.
pub fn stream(base: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, label))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn fnv_reference_values() {
        // Published FNV-1a test vectors.
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn streams_are_label_separated_and_reproducible() {
        let mut a1 = stream(7, "init/encoder");
        let mut a2 = stream(7, "init/encoder");
        let mut b = stream(7, "init/decoder");
        let xs1: Vec<u64> = (0..4).map(|_| a1.random()).collect();
        let xs2: Vec<u64> = (0..4).map(|_| a2.random()).collect();
        let ys: Vec<u64> = (0..4).map(|_| b.random()).collect();
        assert_eq!(xs1, xs2);
        assert_ne!(xs1, ys);
    }
}
