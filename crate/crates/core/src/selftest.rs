//! Quick built-in checks run by the `selftest` subcommand.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cache::{access_latency, CacheGeometry, CacheState, ReplacementPolicy};
use crate::cipher::{prince_decrypt, prince_encrypt, CipherKey, LineAddress};
use crate::domains::Sdid;
use crate::experiments::{run_cell, CellSpec};
use crate::overhead::{tag_layout, total_storage};

/// Published PRINCE test vectors: `(plaintext, k0, k1, ciphertext)`.
const PRINCE_VECTORS: [(u64, u64, u64, u64); 5] = [
    (0x0000000000000000, 0x0000000000000000, 0x0000000000000000, 0x818665aa0d02dfda),
    (0xffffffffffffffff, 0x0000000000000000, 0x0000000000000000, 0x604ae6ca03c20ada),
    (0x0000000000000000, 0xffffffffffffffff, 0x0000000000000000, 0x9fb51935fc3df524),
    (0x0000000000000000, 0x0000000000000000, 0xffffffffffffffff, 0x78a54cbe737bb7ef),
    (0x0123456789abcdef, 0x0000000000000000, 0xfedcba9876543210, 0xae25ad3ca8fa9ccf),
];

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{verdict} {:<22} {}", self.name, self.detail)
    }
}

fn check(name: &'static str, passed: bool, detail: impl Into<String>) -> Check {
    Check { name, passed, detail: detail.into() }
}

fn latency_rules() -> Check {
    let bad: Vec<u32> = (1..=24)
        .filter(|&h| {
            let want = match h {
                1 => 43,
                2..=8 => 44,
                9..=16 => 45,
                _ => 46,
            };
            access_latency(h, 8) != want
        })
        .collect();
    check("latency", bad.is_empty(), format!("mismatching H: {bad:?}"))
}

fn storage() -> Check {
    let g = CacheGeometry::default();
    let conv = tag_layout(&g, false);
    let full = tag_layout(&g, true);
    let total = total_storage(&g, true);
    let ok = conv.tag_storage_bits == 3_801_088
        && conv.tag_storage_kib == 464.0
        && full.tag_storage_kib == 672.0
        && total_storage(&g, false).total_kib == 8656.0
        && total.total_kib == 8864.0
        && (total.overhead_vs_conventional - 0.024).abs() <= 0.0005;
    check(
        "storage",
        ok,
        format!("{} / {} KiB tags, overhead {:.2}%", conv.tag_storage_kib, full.tag_storage_kib, 100.0 * total.overhead_vs_conventional),
    )
}

fn prince() -> Check {
    let mut failures = 0;
    for (pt, k0, k1, ct) in PRINCE_VECTORS {
        let key = CipherKey::from_halves(k0, k1);
        if prince_encrypt(pt, key) != ct || prince_decrypt(ct, key) != pt {
            failures += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..1000 {
        let key = CipherKey::random(&mut rng);
        let block: u64 = rng.gen();
        if prince_decrypt(prince_encrypt(block, key), key) != block {
            failures += 1;
        }
    }
    check("prince", failures == 0, format!("{failures} failures"))
}

/// Random accesses on a small cache, checking residency invariants after each.
fn invariants() -> Check {
    let g = CacheGeometry::with_sets(4, 16, 2).unwrap();
    let mut cache = CacheState::new(g, 3).with_policy(ReplacementPolicy::Random);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut problem = None;
    for op in 0..10_000 {
        // A line always sees the same window, as the page table guarantees.
        let addr = LineAddress(rng.gen_range(0..200));
        let h = 1 + (addr.0 % 4) as u32;
        let r = cache.access_with(addr, h, Sdid::Normal);
        let home = cache.home_set(r.way, addr);
        let offset = (r.set + g.sets_per_way() - home) % g.sets_per_way();
        if offset >= h as usize {
            problem = Some(format!("op {op}: {addr} outside its window"));
        } else if !cache.contains(addr, h) {
            problem = Some(format!("op {op}: {addr} missing after access"));
        } else {
            let mut tags: Vec<u64> = cache.valid_entries().map(|(_, _, e)| e.full_tag.0).collect();
            let n = tags.len();
            tags.sort_unstable();
            tags.dedup();
            if tags.len() != n {
                problem = Some(format!("op {op}: duplicate resident line"));
            }
        }
        if problem.is_some() {
            break;
        }
    }
    check("invariants", problem.is_none(), problem.unwrap_or_else(|| "10000 accesses".into()))
}

fn fill_before_evict() -> Check {
    let g = CacheGeometry::with_sets(4, 16, 2).unwrap();
    let mut cache = CacheState::new(g, 5);
    let h = g.sets_per_way() as u32;
    let evictions = (0..g.num_lines())
        .filter(|&a| cache.access_with(LineAddress(a), h, Sdid::Normal).evicted.is_some())
        .count();
    let hits = (0..g.num_lines())
        .filter(|&a| cache.access_with(LineAddress(a), h, Sdid::Normal).hit)
        .count() as u64;
    check(
        "fill_before_evict",
        evictions == 0 && hits == g.num_lines(),
        format!("{evictions} evictions, {hits}/{} second-pass hits", g.num_lines()),
    )
}

/// Single-member eviction on a 2-way x 4-set cache against the closed form
/// over way and offset choices.
fn small_oracle() -> Check {
    let g = CacheGeometry::with_sets(2, 4, 1).unwrap();
    let sets = g.sets_per_way();
    let rounds = 20_000u64;
    let mut worst = 0.0f64;
    for h in [1u32, 2] {
        let mut cache = CacheState::new(g, 100 + u64::from(h)).with_policy(ReplacementPolicy::Random);
        let (victim, member) = (LineAddress(1), LineAddress(2));
        let mut overlap = 0usize;
        for w in 0..g.num_ways() {
            let (hv, hm) = (cache.home_set(w, victim), cache.home_set(w, member));
            for ov in 0..h as usize {
                for om in 0..h as usize {
                    overlap += usize::from((hv + ov) % sets == (hm + om) % sets);
                }
            }
        }
        let ways = g.num_ways() as f64;
        let p = overlap as f64 / (ways * ways * f64::from(h * h));
        let mut evicted = 0u64;
        for _ in 0..rounds {
            cache.flush();
            cache.access_with(victim, h, Sdid::High);
            cache.access_with(member, h, Sdid::Normal);
            evicted += u64::from(!cache.contains(victim, h));
        }
        let sigma = (p * (1.0 - p) / rounds as f64).sqrt().max(1e-12);
        worst = worst.max((evicted as f64 / rounds as f64 - p).abs() / sigma);
    }
    check("small_oracle", worst <= 4.0, format!("worst deviation {worst:.2} sigma"))
}

fn determinism() -> Check {
    let g = CacheGeometry::with_sets(4, 32, 1).unwrap();
    let spec = CellSpec::new(2, 1, 9.0, 8, 99, 2000);
    let same = match (run_cell(&g, &spec), run_cell(&g, &spec)) {
        (Ok(a), Ok(b)) => (a.successes, a.pce_size) == (b.successes, b.pce_size),
        _ => false,
    };
    check("determinism", same, "repeated cell")
}

pub fn run_all() -> Vec<Check> {
    vec![
        latency_rules(),
        storage(),
        prince(),
        invariants(),
        fill_before_evict(),
        small_oracle(),
        determinism(),
    ]
}
