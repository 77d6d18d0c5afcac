//! PRINCE block encryption and the encrypted set index derived from it.
//!
//! The round function is table driven: every linear layer is split into
//! eight byte-indexed tables, and the forward rounds fold the S-box layer
//! into the same lookups.

use std::fmt;
use std::sync::LazyLock;

use rand::Rng;

use crate::error::{Error, Result};

const SBOX: [u8; 16] = [
    0xb, 0xf, 0x3, 0x2, 0xa, 0xc, 0x9, 0x1, 0x6, 0x7, 0x8, 0x0, 0xe, 0x5, 0xd, 0x4,
];
const SBOX_INV: [u8; 16] = [
    0xb, 0x7, 0x3, 0x2, 0xf, 0xd, 0x8, 0x9, 0xa, 0x6, 0x4, 0x0, 0x5, 0xe, 0xc, 0x1,
];

const ROUND_CONSTANTS: [u64; 12] = [
    0x0000000000000000,
    0x13198a2e03707344,
    0xa4093822299f31d0,
    0x082efa98ec4e6c89,
    0x452821e638d01377,
    0xbe5466cf34e90c6c,
    0x7ef84f78fd955cb1,
    0x85840851f1ac43aa,
    0xc882d32f25323c54,
    0x64a51195e0e3610d,
    0xd3b5a399ca0c2399,
    0xc0ac29b7c97c50dd,
];

/// `RC[i] ^ RC[11 - i]` for every `i`.
const ALPHA: u64 = 0xc0ac29b7c97c50dd;

/// A 128-bit PRINCE key, `k0 || k1` with `k0` in the high half.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct CipherKey(pub u128);

impl CipherKey {
    pub fn from_halves(k0: u64, k1: u64) -> Self {
        CipherKey(((k0 as u128) << 64) | k1 as u128)
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        CipherKey(rng.gen())
    }

    pub fn k0(&self) -> u64 {
        (self.0 >> 64) as u64
    }

    pub fn k1(&self) -> u64 {
        self.0 as u64
    }

    /// Returns a copy with bit `bit` (0 = least significant of `k1`) inverted.
    pub fn flip_bit(&self, bit: u32) -> Self {
        CipherKey(self.0 ^ (1u128 << bit))
    }
}

impl fmt::Debug for CipherKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CipherKey({:032x})", self.0)
    }
}

/// Line-granular physical address (byte address with the offset bits removed).
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct LineAddress(pub u64);

impl LineAddress {
    pub fn value(self) -> u64 {
        self.0
    }
}

impl fmt::Debug for LineAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "LineAddress({:#x})", self.0)
    }
}

impl fmt::Display for LineAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#x}", self.0)
    }
}

impl From<u64> for LineAddress {
    fn from(v: u64) -> Self {
        LineAddress(v)
    }
}

#[inline]
fn nibble(x: u64, i: usize) -> u64 {
    (x >> (60 - 4 * i)) & 0xf
}

fn shift_rows(x: u64) -> u64 {
    (0..16).fold(0, |acc, i| acc | nibble(x, (5 * i) % 16) << (60 - 4 * i))
}

fn inv_shift_rows(x: u64) -> u64 {
    (0..16).fold(0, |acc, i| acc | nibble(x, (13 * i) % 16) << (60 - 4 * i))
}

/// One 16-bit block of M'. `shift` is 0 for the outer blocks, 1 for the inner ones.
fn m_hat(chunk: u64, shift: usize) -> u64 {
    // M0..M3 each zero one bit of a nibble, most significant bit first.
    const MASKS: [u64; 4] = [0x7, 0xb, 0xd, 0xe];
    let mut out = 0;
    for row in 0..4 {
        let mut acc = 0;
        for col in 0..4 {
            let x = (chunk >> (12 - 4 * col)) & 0xf;
            acc ^= x & MASKS[(row + col + shift) % 4];
        }
        out |= acc << (12 - 4 * row);
    }
    out
}

fn m_prime(x: u64) -> u64 {
    let c0 = m_hat((x >> 48) & 0xffff, 0);
    let c1 = m_hat((x >> 32) & 0xffff, 1);
    let c2 = m_hat((x >> 16) & 0xffff, 1);
    let c3 = m_hat(x & 0xffff, 0);
    (c0 << 48) | (c1 << 32) | (c2 << 16) | c3
}

type ByteTables = [[u64; 256]; 8];

struct Tables {
    sbox8_inv: [u8; 256],
    /// M o S
    forward: Box<ByteTables>,
    /// M' o S
    middle: Box<ByteTables>,
    /// M^-1 = M' o SR^-1
    inverse: Box<ByteTables>,
    /// M^-1 o S^-1
    backward: Box<ByteTables>,
    /// M^-1(RC[i]) for the backward rounds.
    inverse_constants: [u64; 12],
}

/// Tables for `linear(sub(x))` where `sub` is a per-byte substitution.
fn byte_tables(sub: &[u8; 256], linear: impl Fn(u64) -> u64) -> Box<ByteTables> {
    let mut t = Box::new([[0u64; 256]; 8]);
    for (j, row) in t.iter_mut().enumerate() {
        for (b, slot) in row.iter_mut().enumerate() {
            *slot = linear((sub[b] as u64) << (8 * j));
        }
    }
    t
}

static TABLES: LazyLock<Tables> = LazyLock::new(|| {
    let mut sbox8 = [0u8; 256];
    let mut sbox8_inv = [0u8; 256];
    for b in 0..256 {
        sbox8[b] = (SBOX[b >> 4] << 4) | SBOX[b & 0xf];
        sbox8_inv[b] = (SBOX_INV[b >> 4] << 4) | SBOX_INV[b & 0xf];
    }
    let mut identity = [0u8; 256];
    for (b, v) in identity.iter_mut().enumerate() {
        *v = b as u8;
    }
    let m_inv = |x| m_prime(inv_shift_rows(x));
    Tables {
        sbox8_inv,
        forward: byte_tables(&sbox8, |x| shift_rows(m_prime(x))),
        middle: byte_tables(&sbox8, m_prime),
        inverse: byte_tables(&identity, m_inv),
        backward: byte_tables(&sbox8_inv, m_inv),
        inverse_constants: ROUND_CONSTANTS.map(m_inv),
    }
});

#[inline(always)]
fn apply(t: &ByteTables, x: u64) -> u64 {
    t[0][(x & 0xff) as usize]
        ^ t[1][((x >> 8) & 0xff) as usize]
        ^ t[2][((x >> 16) & 0xff) as usize]
        ^ t[3][((x >> 24) & 0xff) as usize]
        ^ t[4][((x >> 32) & 0xff) as usize]
        ^ t[5][((x >> 40) & 0xff) as usize]
        ^ t[6][((x >> 48) & 0xff) as usize]
        ^ t[7][((x >> 56) & 0xff) as usize]
}

#[inline(always)]
fn sub_bytes(sbox: &[u8; 256], x: u64) -> u64 {
    let mut out = 0;
    for j in 0..8 {
        out |= (sbox[((x >> (8 * j)) & 0xff) as usize] as u64) << (8 * j);
    }
    out
}

fn prince_core(block: u64, whiten_in: u64, whiten_out: u64, k1: u64) -> u64 {
    let t = &*TABLES;
    let mut x = block ^ whiten_in ^ k1 ^ ROUND_CONSTANTS[0];
    for rc in &ROUND_CONSTANTS[1..=5] {
        x = apply(&t.forward, x) ^ k1 ^ rc;
    }
    x = apply(&t.middle, x);
    // Backward rounds are (^ k1 ^ RC, M^-1, S^-1). Each S^-1 is deferred into
    // the next round's table, and M^-1 distributes over the key addition.
    let k1_inv = apply(&t.inverse, k1);
    for rc_inv in &t.inverse_constants[6..=10] {
        x = apply(&t.backward, x) ^ k1_inv ^ rc_inv;
    }
    sub_bytes(&t.sbox8_inv, x) ^ k1 ^ ROUND_CONSTANTS[11] ^ whiten_out
}

#[inline]
fn derive_k0_prime(k0: u64) -> u64 {
    k0.rotate_right(1) ^ (k0 >> 63)
}

/// Encrypts one 64-bit block with the full 12-round PRINCE.
pub fn prince_encrypt(block: u64, key: CipherKey) -> u64 {
    let k0 = key.k0();
    prince_core(block, k0, derive_k0_prime(k0), key.k1())
}

/// Inverse of [`prince_encrypt`], using the alpha-reflection property.
///
/// The cache never decrypts; this exists for round-trip checks.
pub fn prince_decrypt(block: u64, key: CipherKey) -> u64 {
    let k0 = key.k0();
    prince_core(block, derive_k0_prime(k0), k0, key.k1() ^ ALPHA)
}

/// Encrypted set index of `addr` under `key` for a partition of `num_sets` sets.
///
/// The line address is zero-extended to 64 bits and the low bits of the
/// ciphertext are kept.
pub fn index_of(addr: LineAddress, key: CipherKey, num_sets: u64) -> Result<u64> {
    if num_sets == 0 || !num_sets.is_power_of_two() {
        return Err(Error::config(
            "num_sets",
            format!("{num_sets} is not a power of two"),
        ));
    }
    Ok(prince_encrypt(addr.0, key) & (num_sets - 1))
}

#[inline]
pub(crate) fn index_masked(addr: LineAddress, key: CipherKey, mask: u64) -> u64 {
    prince_encrypt(addr.0, key) & mask
}

// Exposed for the S-box sanity test only.
#[cfg(test)]
pub(crate) fn sbox_layer(x: u64) -> u64 {
    (0..16).fold(0, |acc, i| acc | (SBOX[(x >> (4 * i)) as usize & 0xf] as u64) << (4 * i))
}
