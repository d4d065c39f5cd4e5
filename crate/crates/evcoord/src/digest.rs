//! Small stable content digests (FNV-1a, 64-bit) for cache keys and
//! manifest file checksums. Not cryptographic; collision resistance at the
//! scale of a results directory is all that is asked of it.

/// FNV-1a over a byte slice.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Digest as fixed-width lowercase hex.
pub fn fnv1a64_hex(bytes: &[u8]) -> String {
    format!("{:016x}", fnv1a64(bytes))
}
