//! Deterministic derivation of independent random streams.
//!
//! Every stochastic component draws from a `ChaCha8Rng` whose 256-bit seed is
//! derived from a master seed, a purpose label, and integer indices (for
//! example the repetition number). Streams with different labels or indices
//! are statistically independent, and the derivation is pure integer
//! arithmetic, so results are identical across platforms.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One round of the splitmix64 generator; also serves as the mixing
/// finalizer when absorbing data words.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a named random stream from the master seed.
pub fn stream(master: u64, label: &str, indices: &[u64]) -> ChaCha8Rng {
    let mut state = master ^ 0x6A09_E667_F3BC_C909;
    let absorb = |state: &mut u64, word: u64| {
        *state ^= word;
        splitmix64(state);
    };
    // Absorb the label in 8-byte little-endian words, length-prefixed so
    // that ("ab", [..]) and ("a", [b..]) cannot collide.
    absorb(&mut state, label.len() as u64);
    for chunk in label.as_bytes().chunks(8) {
        let mut word = [0u8; 8];
        word[..chunk.len()].copy_from_slice(chunk);
        absorb(&mut state, u64::from_le_bytes(word));
    }
    absorb(&mut state, indices.len() as u64);
    for &ix in indices {
        absorb(&mut state, ix);
    }
    let mut seed = [0u8; 32];
    for word in 0..4 {
        let bytes = splitmix64(&mut state).to_le_bytes();
        seed[8 * word..8 * word + 8].copy_from_slice(&bytes);
    }
    ChaCha8Rng::from_seed(seed)
}
