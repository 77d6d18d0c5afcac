//! A second, deliberately naive skewed cache and Prime+Prune+Probe, sharing
//! nothing with the library but the algorithm's description.

use rand::Rng;

use super::prince_ref;

pub struct RefCache {
    pub sets: usize,
    pub keys: Vec<(u64, u64)>,
    slots: Vec<Vec<Option<u64>>>,
}

impl RefCache {
    pub fn new<R: Rng>(ways: usize, sets: usize, rng: &mut R) -> Self {
        RefCache {
            sets,
            keys: (0..ways).map(|_| (rng.gen(), rng.gen())).collect(),
            slots: vec![vec![None; sets]; ways],
        }
    }

    pub fn home(&self, way: usize, addr: u64) -> usize {
        let (k0, k1) = self.keys[way];
        (prince_ref::encrypt(addr, k0, k1) % self.sets as u64) as usize
    }

    pub fn resident(&self, addr: u64, h: usize) -> bool {
        (0..self.keys.len()).any(|w| {
            let home = self.home(w, addr);
            (0..h).any(|o| self.slots[w][(home + o) % self.sets] == Some(addr))
        })
    }

    /// Random way, random offset in the window, whatever is there goes.
    pub fn access<R: Rng>(&mut self, addr: u64, h: usize, rng: &mut R) -> bool {
        if self.resident(addr, h) {
            return true;
        }
        let w = rng.gen_range(0..self.keys.len());
        let o = rng.gen_range(0..h);
        let s = (self.home(w, addr) + o) % self.sets;
        self.slots[w][s] = Some(addr);
        false
    }

    pub fn flush(&mut self) {
        for way in &mut self.slots {
            way.fill(None);
        }
    }
}

pub struct RefAttack {
    pub k: usize,
    pub budget: u64,
    pub aggressive_after: u32,
    pub victim: u64,
    pub vh: usize,
    pub ah: usize,
    pub attacker_lines: u64,
}

/// Returns the captured members and the number of accesses spent.
pub fn ref_profile<R: Rng>(c: &mut RefCache, a: &RefAttack, rng: &mut R) -> (Vec<u64>, u64) {
    let mut used = 0u64;
    let mut members: Vec<u64> = Vec::new();
    'outer: while used < a.budget {
        // Fresh distinct candidates.
        let mut cands: Vec<u64> = Vec::new();
        while cands.len() < a.k {
            let x = rng.gen_range(0..a.attacker_lines);
            if !cands.contains(&x) {
                cands.push(x);
            }
        }
        macro_rules! touch {
            ($addr:expr, $h:expr) => {{
                if used == a.budget {
                    c.flush();
                    break 'outer;
                }
                used += 1;
                c.access($addr, $h, rng)
            }};
        }
        for &x in &cands {
            touch!(x, a.ah);
        }
        let mut clean = false;
        for round in 1..=3 * a.aggressive_after {
            let mut misses = 0;
            let mut kept = Vec::new();
            for &x in &cands {
                if touch!(x, a.ah) {
                    kept.push(x);
                } else {
                    misses += 1;
                    if round <= a.aggressive_after {
                        kept.push(x);
                    }
                }
            }
            cands = kept;
            if misses == 0 {
                clean = true;
                break;
            }
            if cands.is_empty() {
                break;
            }
        }
        if clean && !cands.is_empty() {
            touch!(a.victim, a.vh);
            for &x in &cands {
                if !touch!(x, a.ah) {
                    if !members.contains(&x) {
                        members.push(x);
                    }
                    break;
                }
            }
        }
        c.flush();
    }
    (members, used)
}

/// Fraction of Prime+Probe rounds after which the victim is gone.
pub fn ref_evict_rate<R: Rng>(c: &mut RefCache, a: &RefAttack, members: &[u64], rounds: u64, rng: &mut R) -> f64 {
    if members.is_empty() {
        return 0.0;
    }
    let mut hits = 0;
    for _ in 0..rounds {
        c.flush();
        c.access(a.victim, a.vh, rng);
        for &m in members {
            c.access(m, a.ah, rng);
        }
        hits += u64::from(!c.resident(a.victim, a.vh));
    }
    hits as f64 / rounds as f64
}

/// Exact probability that a single member evicts the victim in one round,
/// by enumerating the victim's and the member's (way, offset) choices.
pub fn single_member_evict_probability(victim_homes: &[usize], member_homes: &[usize], h: usize, sets: usize) -> f64 {
    let ways = victim_homes.len();
    let mut hits = 0usize;
    let mut total = 0usize;
    for wv in 0..ways {
        for ov in 0..h {
            for wm in 0..ways {
                for om in 0..h {
                    total += 1;
                    let sv = (victim_homes[wv] + ov) % sets;
                    let sm = (member_homes[wm] + om) % sets;
                    hits += usize::from(wv == wm && sv == sm);
                }
            }
        }
    }
    hits as f64 / total as f64
}
