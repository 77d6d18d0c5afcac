//! Straight-line PRINCE over a nibble array, written from the cipher's
//! definition without lookup-table folding. Nibble 0 is the most significant.

const S: [u8; 16] = [0xb, 0xf, 0x3, 0x2, 0xa, 0xc, 0x9, 0x1, 0x6, 0x7, 0x8, 0x0, 0xe, 0x5, 0xd, 0x4];

const RC: [u64; 12] = [
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

const SHIFT_ROWS: [usize; 16] = [0, 5, 10, 15, 4, 9, 14, 3, 8, 13, 2, 7, 12, 1, 6, 11];

type State = [u8; 16];

fn unpack(x: u64) -> State {
    let mut s = [0u8; 16];
    for (i, n) in s.iter_mut().enumerate() {
        *n = ((x >> (60 - 4 * i)) & 0xf) as u8;
    }
    s
}

fn pack(s: &State) -> u64 {
    s.iter().fold(0u64, |acc, &n| (acc << 4) | u64::from(n))
}

fn sub(s: &mut State, table: &[u8; 16]) {
    for n in s.iter_mut() {
        *n = table[*n as usize];
    }
}

fn inverse_sbox() -> [u8; 16] {
    let mut inv = [0u8; 16];
    for (i, &v) in S.iter().enumerate() {
        inv[v as usize] = i as u8;
    }
    inv
}

/// `M̂0` (`hat = 0`) or `M̂1` (`hat = 1`) applied to four nibbles. Block
/// `(r, c)` is the identity with diagonal entry `(r + c + hat) mod 4`
/// cleared; entry 0 is the most significant bit of a nibble.
fn m_hat(chunk: [u8; 4], hat: usize) -> [u8; 4] {
    let mut out = [0u8; 4];
    for (r, o) in out.iter_mut().enumerate() {
        for (c, &x) in chunk.iter().enumerate() {
            let cleared = (r + c + hat) % 4;
            *o ^= x & !(0x8 >> cleared) & 0xf;
        }
    }
    out
}

fn m_prime(s: &mut State) {
    for (chunk, hat) in [(0, 0), (1, 1), (2, 1), (3, 0)] {
        let n = [s[4 * chunk], s[4 * chunk + 1], s[4 * chunk + 2], s[4 * chunk + 3]];
        s[4 * chunk..4 * chunk + 4].copy_from_slice(&m_hat(n, hat));
    }
}

fn shift_rows(s: &mut State) {
    let old = *s;
    for i in 0..16 {
        s[i] = old[SHIFT_ROWS[i]];
    }
}

fn inv_shift_rows(s: &mut State) {
    let old = *s;
    for i in 0..16 {
        s[SHIFT_ROWS[i]] = old[i];
    }
}

fn xor(s: &mut State, k: u64) {
    let k = unpack(k);
    for i in 0..16 {
        s[i] ^= k[i];
    }
}

fn core(block: u64, k1: u64) -> u64 {
    let inv = inverse_sbox();
    let mut s = unpack(block);
    xor(&mut s, k1 ^ RC[0]);
    for rc in &RC[1..6] {
        sub(&mut s, &S);
        m_prime(&mut s);
        shift_rows(&mut s);
        xor(&mut s, rc ^ k1);
    }
    sub(&mut s, &S);
    m_prime(&mut s);
    sub(&mut s, &inv);
    for rc in &RC[6..11] {
        xor(&mut s, rc ^ k1);
        inv_shift_rows(&mut s);
        m_prime(&mut s);
        sub(&mut s, &inv);
    }
    xor(&mut s, RC[11] ^ k1);
    pack(&s)
}

pub fn encrypt(block: u64, k0: u64, k1: u64) -> u64 {
    let k0_prime = k0.rotate_right(1) ^ (k0 >> 63);
    core(block ^ k0, k1) ^ k0_prime
}

pub fn decrypt(block: u64, k0: u64, k1: u64) -> u64 {
    let k0_prime = k0.rotate_right(1) ^ (k0 >> 63);
    core(block ^ k0_prime, k1 ^ 0xc0ac29b7c97c50dd) ^ k0
}

/// `(plaintext, k0, k1, ciphertext)` from the cipher's published test vectors.
pub const VECTORS: [(u64, u64, u64, u64); 5] = [
    (0x0000000000000000, 0x0000000000000000, 0x0000000000000000, 0x818665aa0d02dfda),
    (0xffffffffffffffff, 0x0000000000000000, 0x0000000000000000, 0x604ae6ca03c20ada),
    (0x0000000000000000, 0xffffffffffffffff, 0x0000000000000000, 0x9fb51935fc3df524),
    (0x0000000000000000, 0x0000000000000000, 0xffffffffffffffff, 0x78a54cbe737bb7ef),
    (0x0123456789abcdef, 0x0000000000000000, 0xfedcba9876543210, 0xae25ad3ca8fa9ccf),
];
