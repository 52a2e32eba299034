//! Keyed random streams.
//!
//! Every stochastic step draws from a stream identified by the user seed and
//! a short key path such as `(replicate, subject)`. Work can then be split
//! across threads in any order without changing a single draw.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream for `seed` under the key path `keys`.
pub fn stream(seed: u64, keys: &[u64]) -> ChaCha8Rng {
    let mut state = splitmix(seed);
    let mut bytes = [0u8; 32];
    for &k in keys {
        state = splitmix(state ^ splitmix(k.wrapping_add(0xD1B5_4A32_D192_ED03)));
    }
    for chunk in bytes.chunks_mut(8) {
        state = splitmix(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}
