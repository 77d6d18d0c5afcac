//! The skewed, cipher-indexed last-level cache with per-access logical
//! associativity.
//!
//! Each way is a direct-mapped partition with its own index key. A line with
//! logical associativity `H` may live in any of the `H` consecutive sets that
//! start at its home set in each way, so `H * num_ways` slots form its logical
//! set. Only tags are modelled.

mod geometry;
mod latency;

use std::cell::RefCell;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustc_hash::FxHashMap;

use crate::cipher::{index_masked, CipherKey, LineAddress};
use crate::domains::{Sdid, SecurityDomain};

pub use geometry::CacheGeometry;
pub use latency::{access_latency, BASE_LATENCY_CYCLES};

/// How a miss picks the slot it fills.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReplacementPolicy {
    /// Fill an invalid candidate slot if one exists, otherwise replace a
    /// random way at a random window offset.
    #[default]
    InvalidFirst,
    /// Always replace a random way at a random window offset, whether or not
    /// the chosen slot holds a line.
    Random,
}

/// One tag-store slot as seen from outside.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TagEntry {
    pub full_tag: LineAddress,
    pub valid: bool,
    pub sdid: Sdid,
    /// Logical associativity in force when the line was inserted.
    pub insert_h: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccessResult {
    pub hit: bool,
    pub latency_cycles: u32,
    /// Location of the hit, or of the fill on a miss.
    pub way: usize,
    pub set: usize,
    pub evicted: Option<LineAddress>,
}

/// Where an insertion landed and what it displaced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Placement {
    pub way: usize,
    pub set: usize,
    pub evicted: Option<LineAddress>,
}

#[derive(Debug, Clone, Copy, Default)]
struct Slot {
    tag: u64,
    // Valid iff equal to the cache's current stamp; bumping the stamp flushes.
    stamp: u32,
    insert_h: u32,
    sdid: Sdid,
}

const NOT_COMPUTED: u32 = u32::MAX;

/// Direct-mapped memo of per-way home sets, filled one way at a time and
/// cleared on every re-key.
#[derive(Debug, Clone)]
struct HomeMemo {
    ways: usize,
    tags: Vec<Option<u64>>,
    homes: Vec<u32>,
}

const MEMO_BITS: u32 = 12;

impl HomeMemo {
    fn new(ways: usize) -> Self {
        let n = 1usize << MEMO_BITS;
        HomeMemo { ways, tags: vec![None; n], homes: vec![NOT_COMPUTED; n * ways] }
    }

    fn clear(&mut self) {
        self.tags.fill(None);
    }

    fn row(&mut self, addr: u64) -> &mut [u32] {
        let i = (addr.wrapping_mul(0x9e37_79b9_7f4a_7c15) >> (64 - MEMO_BITS)) as usize;
        let base = i * self.ways;
        let row = &mut self.homes[base..base + self.ways];
        if self.tags[i] != Some(addr) {
            row.fill(NOT_COMPUTED);
            self.tags[i] = Some(addr);
        }
        row
    }

    fn home(&mut self, addr: u64, way: usize, keys: &[CipherKey], mask: u64) -> u32 {
        let slot = &mut self.row(addr)[way];
        if *slot == NOT_COMPUTED {
            *slot = index_masked(LineAddress(addr), keys[way], mask) as u32;
        }
        *slot
    }

    fn all(&mut self, addr: u64, keys: &[CipherKey], mask: u64, out: &mut Vec<u32>) {
        let row = self.row(addr);
        out.clear();
        for (h, key) in row.iter_mut().zip(keys) {
            if *h == NOT_COMPUTED {
                *h = index_masked(LineAddress(addr), *key, mask) as u32;
            }
            out.push(*h);
        }
    }
}

/// Contents of the cache in a form that compares equal iff two caches are
/// observably identical.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheSnapshot {
    pub slots: Vec<Option<TagEntry>>,
    pub keys: Vec<CipherKey>,
    pub epoch: u64,
    pub access_counter: u64,
}

#[derive(Debug, Clone)]
pub struct CacheState {
    geometry: CacheGeometry,
    ways: usize,
    sets: usize,
    mask: u64,
    slots: Vec<Slot>,
    keys: Vec<CipherKey>,
    epoch: u64,
    access_counter: u64,
    stamp: u32,
    policy: ReplacementPolicy,
    rng: ChaCha8Rng,
    memo: RefCell<HomeMemo>,
    // Slot index of every resident line. Only trusted while no line is
    // resident twice; after that, lookups fall back to scanning windows.
    resident: FxHashMap<u64, usize>,
    aliased: bool,
    scratch: Vec<u32>,
}

impl CacheState {
    /// Empty cache whose keys and replacement choices come from `seed`.
    pub fn new(geometry: CacheGeometry, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keys = (0..geometry.num_ways()).map(|_| CipherKey::random(&mut rng)).collect();
        Self::build(geometry, keys, rng)
    }

    /// Empty cache with explicit per-way keys.
    pub fn with_keys(geometry: CacheGeometry, keys: Vec<CipherKey>, seed: u64) -> Self {
        assert_eq!(keys.len(), geometry.num_ways(), "one key per way");
        Self::build(geometry, keys, ChaCha8Rng::seed_from_u64(seed))
    }

    fn build(geometry: CacheGeometry, keys: Vec<CipherKey>, rng: ChaCha8Rng) -> Self {
        let ways = geometry.num_ways();
        let sets = geometry.sets_per_way();
        CacheState {
            geometry,
            ways,
            sets,
            mask: sets as u64 - 1,
            slots: vec![Slot::default(); ways * sets],
            keys,
            epoch: 0,
            access_counter: 0,
            stamp: 1,
            policy: ReplacementPolicy::default(),
            rng,
            memo: RefCell::new(HomeMemo::new(ways)),
            resident: FxHashMap::default(),
            aliased: false,
            scratch: Vec::with_capacity(ways),
        }
    }

    pub fn with_policy(mut self, policy: ReplacementPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn geometry(&self) -> &CacheGeometry {
        &self.geometry
    }

    pub fn policy(&self) -> ReplacementPolicy {
        self.policy
    }

    pub fn keys(&self) -> &[CipherKey] {
        &self.keys
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Demand accesses since the last re-key.
    pub fn access_counter(&self) -> u64 {
        self.access_counter
    }

    pub fn home_set(&self, way: usize, addr: LineAddress) -> usize {
        assert!(way < self.ways, "way {way} out of range");
        self.memo.borrow_mut().home(addr.0, way, &self.keys, self.mask) as usize
    }

    fn check_h(&self, h: u32) {
        assert!(
            h >= 1 && h as usize <= self.sets,
            "logical associativity {h} outside [1, {}]",
            self.sets
        );
    }

    #[inline]
    fn slot(&self, way: usize, set: usize) -> &Slot {
        &self.slots[way * self.sets + set]
    }

    #[inline]
    fn is_valid(&self, slot: &Slot) -> bool {
        slot.stamp == self.stamp
    }

    fn scan(&self, addr: LineAddress, h: u32, homes: &[u32]) -> Option<(usize, usize)> {
        for (way, &home) in homes.iter().enumerate() {
            for r in 0..h as usize {
                let set = (home as usize + r) & self.mask as usize;
                let s = self.slot(way, set);
                if s.tag == addr.0 && self.is_valid(s) {
                    return Some((way, set));
                }
            }
        }
        None
    }

    /// Searches the `h`-set window of every way for `addr`. Does not change
    /// the cache contents.
    pub fn lookup(&self, addr: LineAddress, h: u32) -> Option<(usize, usize)> {
        self.check_h(h);
        if self.aliased {
            let mut homes = Vec::with_capacity(self.ways);
            self.memo.borrow_mut().all(addr.0, &self.keys, self.mask, &mut homes);
            return self.scan(addr, h, &homes);
        }
        // Equivalent to the window scan: the line is found iff its only copy
        // lies inside the window of the way holding it.
        let &idx = self.resident.get(&addr.0)?;
        let (way, set) = (idx / self.sets, idx % self.sets);
        let home = self.home_set(way, addr);
        let offset = (set + self.sets - home) & self.mask as usize;
        (offset < h as usize).then_some((way, set))
    }

    pub fn contains(&self, addr: LineAddress, h: u32) -> bool {
        self.lookup(addr, h).is_some()
    }

    fn invalid_candidates<'a>(
        &'a self,
        homes: &'a [u32],
        h: usize,
    ) -> impl Iterator<Item = (usize, usize)> + 'a {
        let mask = self.mask as usize;
        homes
            .iter()
            .enumerate()
            .flat_map(move |(w, &home)| (0..h).map(move |r| (w, (home as usize + r) & mask)))
            .filter(move |&(w, s)| !self.is_valid(self.slot(w, s)))
    }

    fn choose_slot(&mut self, addr: LineAddress, h: u32) -> (usize, usize) {
        let hs = h as usize;
        let mask = self.mask as usize;
        if self.policy == ReplacementPolicy::InvalidFirst {
            let mut homes = std::mem::take(&mut self.scratch);
            self.memo.get_mut().all(addr.0, &self.keys, self.mask, &mut homes);
            let count = self.invalid_candidates(&homes, hs).count();
            let pick = (count > 0).then(|| {
                let nth = self.rng.gen_range(0..count);
                self.invalid_candidates(&homes, hs).nth(nth).unwrap()
            });
            self.scratch = homes;
            if let Some(slot) = pick {
                return slot;
            }
        }
        let w = self.rng.gen_range(0..self.ways);
        let r = self.rng.gen_range(0..hs);
        let home = self.memo.get_mut().home(addr.0, w, &self.keys, self.mask) as usize;
        (w, (home + r) & mask)
    }

    /// Places `addr` in its `h`-window. The caller guarantees it is not
    /// already resident.
    pub fn insert(&mut self, addr: LineAddress, h: u32, sdid: Sdid) -> Placement {
        self.check_h(h);
        let (way, set) = self.choose_slot(addr, h);
        let stamp = self.stamp;
        let idx = way * self.sets + set;
        let old = self.slots[idx];
        let evicted = (old.stamp == stamp).then_some(LineAddress(old.tag));
        if let Some(e) = evicted {
            if self.resident.get(&e.0) == Some(&idx) {
                self.resident.remove(&e.0);
            }
        }
        self.slots[idx] = Slot { tag: addr.0, stamp, insert_h: h, sdid };
        if let Some(prev) = self.resident.insert(addr.0, idx) {
            if self.slots[prev].stamp == stamp && self.slots[prev].tag == addr.0 {
                self.aliased = true;
            }
        }
        Placement { way, set, evicted }
    }

    /// One demand access with the window size of `domain`.
    pub fn access(&mut self, addr: LineAddress, domain: &SecurityDomain) -> AccessResult {
        self.access_with(addr, domain.h, domain.sdid)
    }

    pub fn access_with(&mut self, addr: LineAddress, h: u32, sdid: Sdid) -> AccessResult {
        self.check_h(h);
        self.access_counter += 1;
        let latency_cycles = access_latency(h, self.geometry.num_banks() as u32);
        match self.lookup(addr, h) {
            Some((way, set)) => AccessResult { hit: true, latency_cycles, way, set, evicted: None },
            None => {
                let p = self.insert(addr, h, sdid);
                AccessResult {
                    hit: false,
                    latency_cycles,
                    way: p.way,
                    set: p.set,
                    evicted: p.evicted,
                }
            }
        }
    }

    /// Invalidates every line. Keys, epoch and the access counter are kept.
    pub fn flush(&mut self) {
        if self.stamp == u32::MAX {
            self.slots.fill(Slot::default());
            self.stamp = 1;
        } else {
            self.stamp += 1;
        }
        self.resident.clear();
        self.aliased = false;
    }

    /// Draws fresh keys for every way and starts a new, empty epoch.
    pub fn rekey(&mut self) {
        for key in self.keys.iter_mut() {
            *key = CipherKey::random(&mut self.rng);
        }
        self.memo.get_mut().clear();
        self.flush();
        self.epoch += 1;
        self.access_counter = 0;
    }

    pub fn entry(&self, way: usize, set: usize) -> TagEntry {
        let s = self.slot(way, set);
        TagEntry {
            full_tag: LineAddress(s.tag),
            valid: self.is_valid(s),
            sdid: s.sdid,
            insert_h: s.insert_h,
        }
    }

    /// Every valid entry with its `(way, set)` location.
    pub fn valid_entries(&self) -> impl Iterator<Item = (usize, usize, TagEntry)> + '_ {
        (0..self.ways).flat_map(move |w| {
            (0..self.sets).filter_map(move |s| {
                let e = self.entry(w, s);
                e.valid.then_some((w, s, e))
            })
        })
    }

    pub fn occupancy(&self) -> usize {
        self.slots.iter().filter(|s| self.is_valid(s)).count()
    }

    pub fn snapshot(&self) -> CacheSnapshot {
        let slots = (0..self.ways)
            .flat_map(|w| (0..self.sets).map(move |s| (w, s)))
            .map(|(w, s)| {
                let e = self.entry(w, s);
                e.valid.then_some(e)
            })
            .collect();
        CacheSnapshot {
            slots,
            keys: self.keys.clone(),
            epoch: self.epoch,
            access_counter: self.access_counter,
        }
    }
}
