//! Deterministic derivation of per-task RNG streams from a master seed.
//!
//! Every stochastic component of a run (static segments, actuator
//! generators, disorder ensembles, optimizer, noise) draws from its own
//! ChaCha8 stream whose seed is derived from the master seed, a textual tag,
//! and an index. Derivation is a pure function of those three values, so any
//! subset of a run can be reproduced in isolation and results never depend
//! on call order or thread scheduling.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; good avalanche behavior for seed mixing.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from `master` for the stream named `tag` at `index`.
pub fn derive(master: u64, tag: &str, index: u64) -> u64 {
    // FNV-1a over the tag bytes, folded into the splitmix64 chain.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in tag.as_bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(splitmix64(master ^ h).wrapping_add(index))
}

/// A ChaCha8 stream for the task named `tag` at `index`.
pub fn stream(master: u64, tag: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(master, tag, index))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn derivation_is_stable() {
        // Frozen values: any change here silently breaks replay of old runs.
        assert_eq!(derive(0, "segment", 0), 0x5131_4743_f0af_5d21);
        assert_eq!(derive(42, "generator", 3), derive(42, "generator", 3));
    }

    #[test]
    fn streams_are_independent() {
        let a = derive(7, "segment", 0);
        let b = derive(7, "segment", 1);
        let c = derive(7, "generator", 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_ne!(b, c);
    }

    #[test]
    fn stream_reproduces() {
        let mut r1 = stream(123, "disorder", 9);
        let mut r2 = stream(123, "disorder", 9);
        for _ in 0..16 {
            assert_eq!(r1.next_u64(), r2.next_u64());
        }
    }
}
