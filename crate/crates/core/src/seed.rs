//! Deterministic seed derivation.
//!
//! Every RNG in the toolkit is seeded either directly from a config value or
//! from [`derive_seed`], which hashes `(base_seed, name, index)` with 64-bit
//! FNV-1a over the byte string
//!
//! ```text
//! le64(base_seed) ++ ":" ++ utf8(name) ++ ":" ++ le64(index)
//! ```
//!
//! The scheme is fixed so that every number in a report can be regenerated
//! from the run manifest alone, and so that two mechanisms (or two replicate
//! indices) never share a random stream.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a hash.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Derive the seed for one named random stream.
pub fn derive_seed(base_seed: u64, name: &str, index: u64) -> u64 {
    let mut buf = Vec::with_capacity(name.len() + 18);
    buf.extend_from_slice(&base_seed.to_le_bytes());
    buf.push(b':');
    buf.extend_from_slice(name.as_bytes());
    buf.push(b':');
    buf.extend_from_slice(&index.to_le_bytes());
    fnv1a64(&buf)
}

/// The toolkit-wide RNG, seeded from a 64-bit value.
pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_vectors() {
        // Published FNV-1a test vectors.
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn derived_seeds_are_distinct_per_name_and_index() {
        let mut seen = std::collections::HashSet::new();
        for name in ["swap", "swap2", "toydown"] {
            for idx in 0..100 {
                assert!(seen.insert(derive_seed(7, name, idx)));
            }
        }
    }

    #[test]
    fn derivation_is_stable() {
        // Frozen value: changing the derivation scheme breaks manifest
        // reproducibility, so pin it.
        assert_eq!(derive_seed(42, "mech", 3), fnv1a64(&{
            let mut b = Vec::new();
            b.extend_from_slice(&42u64.to_le_bytes());
            b.push(b':');
            b.extend_from_slice(b"mech");
            b.push(b':');
            b.extend_from_slice(&3u64.to_le_bytes());
            b
        }));
    }
}
