//! Randomised invariant suites. Each returns the number of operations it
//! exercised, or a description of the first violation.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seacache::attack::{ppp_profile, AttackConfig, AttackSurface};
use seacache::experiments::{run_cell, CellSpec};
use seacache::{CacheGeometry, CacheState, DomainTable, LineAddress, PageId, ReplacementPolicy, Sdid};

pub type Outcome = Result<u64, String>;

/// Window size a line always uses: addresses alternate between two
/// "domains" in blocks of eight lines.
pub fn h_of(addr: u64, ah: u32, vh: u32) -> u32 {
    if (addr / 8) % 2 == 0 {
        ah
    } else {
        vh
    }
}

pub fn offset_in_window(cache: &CacheState, way: usize, set: usize, addr: LineAddress) -> usize {
    let sets = cache.geometry().sets_per_way();
    (set + sets - cache.home_set(way, addr)) % sets
}

fn random_workload(seed: u64, ways: usize, sets: usize, policy: ReplacementPolicy) -> (CacheState, ChaCha8Rng, u32, u32) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = CacheGeometry::with_sets(ways, sets, 1).unwrap();
    let cache = CacheState::new(g, rng.gen()).with_policy(policy);
    let ah = rng.gen_range(1..=sets as u32);
    let vh = rng.gen_range(1..=sets as u32);
    (cache, rng, ah, vh)
}

fn random_op(cache: &mut CacheState, rng: &mut ChaCha8Rng) -> Option<u64> {
    let pool = 2 * cache.geometry().num_lines() + 8;
    match rng.gen_range(0..1000) {
        0 => {
            cache.flush();
            None
        }
        1 => {
            cache.rekey();
            None
        }
        _ => Some(rng.gen_range(0..pool)),
    }
}

/// No line is ever resident twice, and every resident line sits inside the
/// window it was inserted with.
pub fn no_duplicates_and_window(seed: u64, ways: usize, sets: usize, policy: ReplacementPolicy, ops: u64) -> Outcome {
    let (mut cache, mut rng, ah, vh) = random_workload(seed, ways, sets, policy);
    for op in 0..ops {
        let Some(a) = random_op(&mut cache, &mut rng) else { continue };
        let h = h_of(a, ah, vh);
        let addr = LineAddress(a);
        let r = cache.access_with(addr, h, Sdid::Normal);
        let off = offset_in_window(&cache, r.way, r.set, addr);
        if off >= h as usize {
            return Err(format!("op {op}: {addr} at offset {off} with H={h}"));
        }
        if op % 8 == 0 {
            let mut seen = HashSet::new();
            for (w, s, e) in cache.valid_entries() {
                if !seen.insert(e.full_tag) {
                    return Err(format!("op {op}: {} resident twice", e.full_tag));
                }
                let want_h = h_of(e.full_tag.0, ah, vh);
                if e.insert_h != want_h || offset_in_window(&cache, w, s, e.full_tag) >= want_h as usize {
                    return Err(format!("op {op}: {} outside its window", e.full_tag));
                }
            }
        }
    }
    Ok(ops)
}

/// A shadow set of resident lines, maintained only from reported hits and
/// evictions, predicts every hit and the occupancy.
pub fn lookup_after_insert(seed: u64, ways: usize, sets: usize, policy: ReplacementPolicy, ops: u64) -> Outcome {
    let (mut cache, mut rng, ah, vh) = random_workload(seed, ways, sets, policy);
    let mut model: HashSet<u64> = HashSet::new();
    for op in 0..ops {
        let Some(a) = random_op(&mut cache, &mut rng) else {
            model.clear();
            continue;
        };
        let h = h_of(a, ah, vh);
        let r = cache.access_with(LineAddress(a), h, Sdid::Normal);
        if r.hit != model.contains(&a) {
            return Err(format!("op {op}: hit={} but model says {}", r.hit, !r.hit));
        }
        if !r.hit {
            model.insert(a);
            if let Some(e) = r.evicted {
                if !model.remove(&e.0) {
                    return Err(format!("op {op}: evicted {e} was not resident"));
                }
            }
        }
        if !cache.contains(LineAddress(a), h) {
            return Err(format!("op {op}: line {a:#x} missing right after access"));
        }
        if cache.occupancy() != model.len() {
            return Err(format!("op {op}: occupancy {} vs model {}", cache.occupancy(), model.len()));
        }
    }
    Ok(ops)
}

/// Distinct lines filling the cache exactly, with windows spanning a whole
/// way, evict nothing under invalid-first fill; a second pass all hits.
pub fn fill_before_evict(seed: u64, ways: usize, sets: usize) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = CacheGeometry::with_sets(ways, sets, 1).unwrap();
    let mut cache = CacheState::new(g, rng.gen());
    let h = sets as u32;
    let base: u64 = rng.gen_range(0..1 << 20);
    let mut lines: Vec<u64> = (base..base + g.num_lines()).collect();
    for i in (1..lines.len()).rev() {
        lines.swap(i, rng.gen_range(0..=i));
    }
    for &a in &lines {
        if let Some(e) = cache.access_with(LineAddress(a), h, Sdid::High).evicted {
            return Err(format!("{e} evicted while filling"));
        }
    }
    for &a in &lines {
        if !cache.access_with(LineAddress(a), h, Sdid::High).hit {
            return Err(format!("{a:#x} missed on the second pass"));
        }
    }
    Ok(2 * g.num_lines())
}

pub struct TinyAttack {
    pub cache: CacheState,
    pub surface: AttackSurface,
    pub cfg: AttackConfig,
    pub rng: ChaCha8Rng,
}

/// A small cache with attacker pages `0..16` and the victim on page 16.
pub fn tiny_attack(seed: u64, ways: usize, sets: usize, vh: u32, ah: u32, k: usize, rkp: f64) -> TinyAttack {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = CacheGeometry::with_sets(ways, sets, 1).unwrap();
    let cache = CacheState::new(g, rng.gen()).with_policy(ReplacementPolicy::Random);
    let mut d = DomainTable::with_layout(ah, vh, 64, 40).unwrap();
    d.register_region(PageId(0), 16, Sdid::Normal).unwrap();
    d.register_page(PageId(16), Sdid::High).unwrap();
    let victim = LineAddress(16 * 64 + rng.gen_range(0..64));
    let surface = AttackSurface::new(&d, victim, 0..16 * 64).unwrap();
    let cfg = AttackConfig { k, rkp_multiple: rkp, eval_rounds: 1000, ..Default::default() };
    TinyAttack { cache, surface, cfg, rng }
}

fn windows_overlap(a: usize, ha: usize, b: usize, hb: usize, sets: usize) -> bool {
    (0..ha).any(|i| (0..hb).any(|j| (a + i) % sets == (b + j) % sets))
}

/// Every captured member shares at least one slot with the victim's window
/// in some way. Returns the members checked and the profiling accesses spent.
pub fn pce_window_overlap(seed: u64, vh: u32, ah: u32) -> Result<(u64, u64), String> {
    let mut t = tiny_attack(seed, 4, 16, vh, ah, 8, 30.0);
    let pce = ppp_profile(&mut t.cache, &t.surface, &t.cfg, &mut t.rng).map_err(|e| e.to_string())?;
    let sets = t.cache.geometry().sets_per_way();
    for &m in &pce.members {
        let ok = (0..t.cache.geometry().num_ways()).any(|w| {
            windows_overlap(
                t.cache.home_set(w, t.surface.victim),
                vh as usize,
                t.cache.home_set(w, m),
                ah as usize,
                sets,
            )
        });
        if !ok {
            return Err(format!("member {m} never overlaps the victim's window"));
        }
    }
    Ok((pce.len() as u64, pce.profiling_accesses_used))
}

/// Profiling spends exactly floor(RKP * N) counted accesses; flushes cost nothing.
pub fn budget_accounting(seed: u64, rkp: f64, k: usize) -> Outcome {
    let mut t = tiny_attack(seed, 2, 16, 1, 1, k, rkp);
    let before = t.cache.access_counter();
    let pce = ppp_profile(&mut t.cache, &t.surface, &t.cfg, &mut t.rng).map_err(|e| e.to_string())?;
    let budget = (rkp * t.cache.geometry().num_lines() as f64).floor() as u64;
    if pce.profiling_accesses_used != budget {
        return Err(format!("used {} of budget {budget}", pce.profiling_accesses_used));
    }
    let counted = t.cache.access_counter() - before;
    if counted != budget {
        return Err(format!("cache counted {counted} accesses, budget {budget}"));
    }
    Ok(budget)
}

/// Identical seeds give identical eviction sets and success counts.
pub fn determinism(seed: u64) -> Outcome {
    let g = CacheGeometry::with_sets(4, 32, 1).unwrap();
    let spec = CellSpec::new(1 + (seed % 3) as u32, 1, 12.0, 8, seed, 500);
    let mut a = run_cell(&g, &spec).map_err(|e| e.to_string())?;
    let mut b = run_cell(&g, &spec).map_err(|e| e.to_string())?;
    a.wall_time_s = 0.0;
    b.wall_time_s = 0.0;
    if a != b {
        return Err(format!("{a:?} != {b:?}"));
    }
    Ok(2 * (12 * g.num_lines() + 500))
}
