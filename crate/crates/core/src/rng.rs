//! Seed derivation. Every run, episode and sampling stream is keyed off one
//! explicit u64 so that repeated invocations replay bit-identically.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; good avalanche, stable across platforms.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a base seed and a stream tag.
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    mix(base ^ mix(tag))
}

/// Deterministic RNG for a derived stream.
pub fn stream_rng(base: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tag))
}

/// Stream tags, one per independent consumer of randomness.
pub mod streams {
    /// Arrival process of a simulated episode.
    pub const ARRIVALS: u64 = 1;
    /// Driver imperfection noise of a simulated episode.
    pub const DRIVERS: u64 = 2;
    /// Network weight initialisation of a training run.
    pub const NET_INIT: u64 = 3;
    /// Epsilon-greedy exploration of a training run.
    pub const EXPLORATION: u64 = 4;
    /// Replay-memory batch sampling of a training run.
    pub const REPLAY: u64 = 5;
    /// Curriculum demand-level draws of a training run.
    pub const CURRICULUM: u64 = 6;
    /// Per-episode environment seeds of a training run.
    pub const EPISODE: u64 = 7;
    /// Per-run seeds of a multi-run training command.
    pub const RUN: u64 = 8;
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn derived_seeds_are_stable_and_distinct() {
        assert_eq!(derive_seed(7, 1), derive_seed(7, 1));
        assert_ne!(derive_seed(7, 1), derive_seed(7, 2));
        assert_ne!(derive_seed(7, 1), derive_seed(8, 1));
    }

    #[test]
    fn stream_rng_replays() {
        let mut a = stream_rng(42, streams::ARRIVALS);
        let mut b = stream_rng(42, streams::ARRIVALS);
        for _ in 0..16 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }
}
