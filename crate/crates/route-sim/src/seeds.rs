//! Deterministic seed derivation.
//!
//! Every source of randomness in the crate is a ChaCha stream seeded through
//! this module, so that one master seed reproduces an entire experiment and
//! logically distinct streams (topology sampling, exploration, replay
//! sampling, weight init, …) never alias each other.

/// SplitMix64 mixing step: a cheap, well-distributed 64-bit permutation.
///
/// Used both as a stream-splitting function and as the hash combiner for
/// deterministic per-link fading draws.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derives an independent child seed from a master seed and a stream tag.
///
/// Distinct tags yield statistically independent streams; the same
/// (master, tag) pair always yields the same child.
pub fn derive(master: u64, tag: u64) -> u64 {
    splitmix64(master ^ splitmix64(tag))
}

/// Folds a slice of words into a single seed, order-sensitively.
pub fn fold(words: &[u64]) -> u64 {
    let mut acc = 0x51ed_2701_ff58_a13cu64;
    for &w in words {
        acc = splitmix64(acc ^ w);
    }
    acc
}

/// Stream tags for the experiment-level RNG streams.
///
/// Kept in one place so no two call sites can accidentally share a stream.
pub mod stream {
    /// Node pool position layout.
    pub const POSITIONS: u64 = 1;
    /// Topology draws consumed by training episodes.
    pub const TRAIN: u64 = 2;
    /// Topology draws for held-out evaluation / benchmarking.
    pub const EVAL: u64 = 3;
    /// Network weight initialization.
    pub const INIT: u64 = 4;
    /// ε-greedy exploration decisions.
    pub const POLICY: u64 = 5;
    /// Replay-buffer minibatch sampling.
    pub const REPLAY: u64 = 6;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_is_deterministic_and_tag_sensitive() {
        assert_eq!(derive(42, 1), derive(42, 1));
        assert_ne!(derive(42, 1), derive(42, 2));
        assert_ne!(derive(42, 1), derive(43, 1));
    }

    #[test]
    fn fold_is_order_sensitive() {
        assert_ne!(fold(&[1, 2]), fold(&[2, 1]));
        assert_eq!(fold(&[1, 2, 3]), fold(&[1, 2, 3]));
    }

    #[test]
    fn splitmix_permutes_zero() {
        // The all-zero master seed must still produce distinct streams.
        assert_ne!(splitmix64(0), 0);
        assert_ne!(derive(0, stream::TRAIN), derive(0, stream::EVAL));
    }
}
