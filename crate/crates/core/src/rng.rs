//! Seed derivation. Every random stream in the pipeline is a `ChaCha8Rng`
//! keyed by a 64-bit seed; child seeds come from a splitmix64 step applied to
//! the parent seed and a stream index, so the tree of streams is fixed by the
//! master seed alone and independent of scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Name recorded in manifests.
pub const RNG_FAMILY: &str = "chacha8/splitmix64";

pub type Rng = ChaCha8Rng;

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for stream `index` under `parent`.
pub fn derive_seed(parent: u64, index: u64) -> u64 {
    splitmix64(splitmix64(parent) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Seed reached by following `path` from `master`.
pub fn seed_path(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(master, |s, &i| derive_seed(s, i))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn derivation_is_deterministic_and_distinct() {
        assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
        assert_ne!(derive_seed(7, 3), derive_seed(7, 4));
        assert_ne!(derive_seed(7, 3), derive_seed(8, 3));
        assert_eq!(seed_path(1, &[2, 3]), derive_seed(derive_seed(1, 2), 3));
    }

    #[test]
    fn streams_reproduce() {
        let a: Vec<u64> = (0..4).map({ let mut r = rng_from_seed(5); move |_| r.random() }).collect();
        let b: Vec<u64> = (0..4).map({ let mut r = rng_from_seed(5); move |_| r.random() }).collect();
        assert_eq!(a, b);
    }
}
