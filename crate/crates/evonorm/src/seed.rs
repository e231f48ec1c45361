//! Deterministic seed derivation for per-candidate RNG streams.

/// splitmix64 finalizer.
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive an independent stream seed from a master seed and a salt.
pub fn mix_seed(master: u64, salt: u64) -> u64 {
    splitmix(splitmix(master) ^ salt.wrapping_mul(0xd6e8_feb8_6659_fd93))
}

/// Two-level derivation: (master, index, role).
pub fn mix_seed3(master: u64, index: u64, role: u64) -> u64 {
    mix_seed(mix_seed(master, index), role)
}
