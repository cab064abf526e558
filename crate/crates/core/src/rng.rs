//! Deterministic seed-stream derivation.
//!
//! Every stochastic task derives its own ChaCha stream by hashing the
//! experiment seed together with a task label, so concurrent work never
//! shares generator state and reruns are bit-reproducible. The derivation is
//! FNV-1a over (seed, label) expanded through SplitMix64 — fixed here rather
//! than taken from `std` because `DefaultHasher` is not stable across
//! releases.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn fnv1a(bytes: impl IntoIterator<Item = u8>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A seeded stream for the task named `label` under the experiment `seed`.
pub fn stream(seed: u64, label: &str) -> ChaCha12Rng {
    let mut state = fnv1a(
        seed.to_le_bytes()
            .into_iter()
            .chain(label.bytes()),
    );
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha12Rng::from_seed(key)
}

/// Indexed variant for per-item streams inside a task (restarts, chains,
/// quadrature shards, …).
pub fn substream(seed: u64, label: &str, index: u64) -> ChaCha12Rng {
    stream(seed, &format!("{label}#{index}"))
}
