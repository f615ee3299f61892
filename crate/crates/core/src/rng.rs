//! Seeded random streams keyed by (seed, purpose, index).
//!
//! Every stochastic draw in the simulator comes from a stream derived here, so
//! results do not depend on evaluation order or thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Program = 1,
    DeviceVariation = 2,
    ReadNoise = 3,
    WeightInit = 4,
    Shuffle = 5,
    NoiseTrace = 6,
    Aging = 7,
}

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, purpose: Purpose, index: u64) -> [u8; 32] {
    let mut state = seed ^ (purpose as u64).wrapping_mul(0xd6e8_feb8_6659_fd93);
    let a = splitmix64(&mut state);
    state ^= index.wrapping_mul(0xa076_1d64_78bd_642f);
    let mut out = [0u8; 32];
    let mut s2 = a ^ state;
    for chunk in out.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut s2).to_le_bytes());
    }
    out
}

pub fn stream(seed: u64, purpose: Purpose, index: u64) -> StreamRng {
    ChaCha8Rng::from_seed(derive_seed(seed, purpose, index))
}

/// Combine two indices into one, e.g. (tile, device).
pub fn pair_index(a: u64, b: u64) -> u64 {
    let mut s = a.wrapping_mul(0x2545_f491_4f6c_dd1d) ^ b;
    splitmix64(&mut s)
}
