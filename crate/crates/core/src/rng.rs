//! Reproducible random streams.
//!
//! Every random draw in the workbench comes from a ChaCha8 stream whose
//! 256-bit key is derived from `(run_seed, stream_id, index)` with the
//! SplitMix64 finalizer. Any implementation that reproduces SplitMix64 and
//! ChaCha8 (as in `rand_chacha`) regenerates the same messages and noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream ids used by the library. Callers may pick any other u64.
pub mod streams {
    pub const INIT: u64 = 0x01;
    pub const MESSAGES: u64 = 0x10;
    pub const NOISE: u64 = 0x11;
    pub const EVAL_MESSAGES: u64 = 0x20;
    pub const EVAL_NOISE: u64 = 0x21;
    pub const ANALYSIS: u64 = 0x30;
    pub const CURRICULUM: u64 = 0x40;
}

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes the three coordinates into one 64-bit value.
pub fn mix_seed(run_seed: u64, stream_id: u64, index: u64) -> u64 {
    let mut s = run_seed;
    let a = splitmix64(&mut s);
    let mut s = a ^ stream_id.rotate_left(17);
    let b = splitmix64(&mut s);
    let mut s = b ^ index.rotate_left(41);
    splitmix64(&mut s)
}

/// Generator for block `index` of stream `stream_id` under `run_seed`.
pub fn stream_rng(run_seed: u64, stream_id: u64, index: u64) -> ChaCha8Rng {
    let mut state = mix_seed(run_seed, stream_id, index);
    let mut key = [0u8; 32];
    for chunk in key.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
