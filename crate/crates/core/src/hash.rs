//! 64-bit FNV-1a hashing used for content digests, dedup keys, and log
//! checksums. Rendered digests are 16 lowercase hex chars.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Raw 64-bit FNV-1a over a byte slice.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = FNV_OFFSET;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// FNV-1a digest of a string rendered as 16 lowercase hex chars.
pub fn fnv1a64_hex(text: &str) -> String {
    format!("{:016x}", fnv1a64(text.as_bytes()))
}
