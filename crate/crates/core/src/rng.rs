//! Pinned 64-bit generator used for every stochastic draw inside the simulator.
//!
//! The algorithm is SplitMix64 (Steele, Lea & Flood): the state advances by the
//! golden-ratio increment `0x9E3779B97F4A7C15` and each output is the state passed
//! through the Stafford "mix13" finalizer. It is fixed here instead of borrowed from
//! a library so that trajectories stay bit-identical across platforms and releases.

use serde::{Deserialize, Serialize};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// The SplitMix64 output finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn from_state(state: u64) -> Self {
        Self { state }
    }

    /// Seeds a stream as `mix(seed ^ mix(stream))`, so that the same user seed gives
    /// unrelated streams for different sequences.
    pub fn seeded(seed: u64, stream: u64) -> Self {
        Self {
            state: mix64(seed ^ mix64(stream.wrapping_add(GOLDEN_GAMMA))),
        }
    }

    pub fn state(&self) -> u64 {
        self.state
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform draw from `{-1, 0, +1}`.
    pub fn next_delta(&mut self) -> i32 {
        (self.next_u64() % 3) as i32 - 1
    }
}
