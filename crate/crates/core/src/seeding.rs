//! Deterministic seed derivation.

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent seed for `(stream, index)` under `base`.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(base) ^ stream) ^ index)
}

/// Named seed streams.
pub mod stream {
    pub const POLICY_INIT: u64 = 1;
    pub const ROLLOUT_ENV: u64 = 2;
    pub const ROLLOUT_SAMPLING: u64 = 3;
    pub const MINIBATCH: u64 = 4;
    /// Evaluation episodes; never used for training.
    pub const EVALUATION: u64 = 0xE7A1;
}
