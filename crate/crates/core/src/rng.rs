//! Counter-based random streams.
//!
//! Every stream is addressed by a master seed, a purpose tag and a short list
//! of integer ids (agent, path, node, ...). The address is hashed into a
//! ChaCha key, so streams never overlap and adding a new consumer does not
//! shift the draws of an existing one. Results therefore do not depend on how
//! work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Logical consumer of randomness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    /// Experience transitions of agents inside a mechanism episode.
    Experience = 1,
    /// Initial type draws.
    Types = 2,
    /// Index-policy rollouts used for welfare estimates.
    Welfare = 3,
    /// Rollouts behind entry-fee estimation.
    EntryFee = 4,
    /// Randomised quadrature abscissae.
    Quadrature = 5,
    /// Seeds handed out by audits.
    Audit = 6,
    /// Seeds of the episodes of a simulation run.
    Episode = 7,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hash a stream address down to 64 bits.
pub fn stream_id(seed: u64, purpose: Purpose, ids: &[u64]) -> u64 {
    let mut h = mix64(seed ^ GOLDEN);
    h = mix64(h ^ (purpose as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93));
    for (k, &id) in ids.iter().enumerate() {
        h = mix64(h.wrapping_add(GOLDEN.wrapping_mul(k as u64 + 1)) ^ mix64(id));
    }
    h
}

/// Open the stream at `(seed, purpose, ids)`.
pub fn stream(seed: u64, purpose: Purpose, ids: &[u64]) -> Stream {
    let id = stream_id(seed, purpose, ids);
    let mut key = [0u8; 32];
    for (k, chunk) in key.chunks_exact_mut(8).enumerate() {
        chunk.copy_from_slice(&mix64(id ^ (k as u64 + 1).wrapping_mul(GOLDEN)).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Derive a child seed, e.g. one episode seed per audit repetition.
pub fn derive_seed(seed: u64, purpose: Purpose, ids: &[u64]) -> u64 {
    mix64(stream_id(seed, purpose, ids) ^ 0x5851_F42D_4C95_7F2D)
}
