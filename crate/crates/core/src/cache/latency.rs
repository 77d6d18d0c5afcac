/// Hit latency of a single-set (H = 1) access, which behaves like CEASER-S.
pub const BASE_LATENCY_CYCLES: u32 = 43;

/// Access latency in cycles for logical associativity `h` over `num_banks` banks.
///
/// One extra cycle computes the window offsets whenever `h > 1`, and every
/// bank round after the first costs one more tag-access cycle.
pub fn access_latency(h: u32, num_banks: u32) -> u32 {
    assert!(h >= 1 && num_banks >= 1, "h and num_banks must be positive");
    let offset = u32::from(h > 1);
    let rounds = h.div_ceil(num_banks);
    BASE_LATENCY_CYCLES + offset + (rounds - 1)
}
