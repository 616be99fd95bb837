//! Small deterministic 64-bit hashing helpers (stable across runs and builds).

pub(crate) fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn combine(seed: u64, value: u64) -> u64 {
    mix(seed ^ mix(value))
}

pub(crate) fn hash_seq<I: IntoIterator<Item = u64>>(seed: u64, items: I) -> u64 {
    items.into_iter().fold(mix(seed), combine)
}

pub(crate) fn hash_bytes(bytes: &[u8]) -> u64 {
    // FNV-1a, then finalised
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    mix(h)
}
