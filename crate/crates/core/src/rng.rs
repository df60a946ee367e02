//! Reproducible random streams.
//!
//! Every random draw in the engines comes from a stream addressed by
//! `(master_seed, run, step, role)`. The construction is counter based, so a
//! stream can be opened anywhere without replaying earlier ones:
//!
//! * key: the 256-bit ChaCha key is four consecutive SplitMix64 outputs
//!   seeded with `master_seed`;
//! * stream id: `run << 4 | role` (runs below `2^60`);
//! * position: the keystream starts at word `step << 32`, giving each step
//!   `2^32` 32-bit words (steps below `2^36`).
//!
//! The generator is ChaCha with 8 rounds. Given the same triple the output is
//! identical on every platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type Stream = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamRole {
    Activation = 0,
    Routing = 1,
    Initial = 2,
    Interaction = 3,
    Exogenous = 4,
}

const STEP_WORDS_LOG2: u32 = 32;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn key_from_seed(master_seed: u64) -> [u8; 32] {
    let mut state = master_seed;
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    key
}

pub fn derive_stream(master_seed: u64, run: u64, step: u64, role: StreamRole) -> Stream {
    debug_assert!(run < 1 << 60, "run index out of range");
    debug_assert!(step < 1 << 36, "step index out of range");
    let mut rng = ChaCha8Rng::from_seed(key_from_seed(master_seed));
    rng.set_stream((run << 4) | role as u64);
    rng.set_word_pos(u128::from(step) << STEP_WORDS_LOG2);
    rng
}
