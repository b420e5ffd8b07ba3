//! Bit-vector helpers.
//!
//! Bit vectors are stored unpacked, one `u8` holding 0 or 1 per position.
//! The packed form (LSB-first within each byte) is used on the wire and in
//! key files.

/// Packs a 0/1 slice into bytes, LSB-first within each byte.
pub fn pack_bits(bits: &[u8]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        debug_assert!(b <= 1);
        out[i / 8] |= (b & 1) << (i % 8);
    }
    out
}

/// Unpacks `len` bits from LSB-first packed bytes.
///
/// Returns `None` if `bytes` is too short for `len` bits.
pub fn unpack_bits(bytes: &[u8], len: usize) -> Option<Vec<u8>> {
    if bytes.len() < len.div_ceil(8) {
        return None;
    }
    Some((0..len).map(|i| (bytes[i / 8] >> (i % 8)) & 1).collect())
}

/// XORs `src` into `dst` elementwise.
pub fn xor_in_place(dst: &mut [u8], src: &[u8]) {
    assert_eq!(dst.len(), src.len());
    for (d, s) in dst.iter_mut().zip(src) {
        *d ^= s;
    }
}

/// Number of positions where `a` and `b` differ.
pub fn hamming(a: &[u8], b: &[u8]) -> usize {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

/// 64-bit FNV-1a, used for transcript and position-list digests.
pub fn fnv1a64(data: &[u8]) -> u64 {
    fnv1a64_continue(0xcbf2_9ce4_8422_2325, data)
}

/// Folds more bytes into an existing FNV-1a state.
pub fn fnv1a64_continue(mut state: u64, data: &[u8]) -> u64 {
    for &b in data {
        state ^= b as u64;
        state = state.wrapping_mul(0x0000_0100_0000_01b3);
    }
    state
}
