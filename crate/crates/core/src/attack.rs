//! The adversary: Prime+Prune+Probe profiling of a partially congruent
//! eviction set within one re-keying period, and Prime+Probe evaluation of
//! the set it produced.

use std::collections::HashSet;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::Rng;

use crate::cache::CacheState;
use crate::cipher::LineAddress;
use crate::domains::{DomainTable, PageId, SecurityDomain, Sdid};
use crate::error::{Error, Result};

/// What a single Prime+Probe round counts as a success.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SuccessMetric {
    /// Priming the set displaced the victim line.
    #[default]
    Evict,
    /// Reloading the victim displaced one of the primed lines.
    Detect,
}

impl FromStr for SuccessMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "evict" => Ok(SuccessMetric::Evict),
            "detect" => Ok(SuccessMetric::Detect),
            other => Err(Error::config("metric", format!("expected evict|detect, got `{other}`"))),
        }
    }
}

impl fmt::Display for SuccessMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SuccessMetric::Evict => "evict",
            SuccessMetric::Detect => "detect",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    /// Fresh candidate lines drawn per PPP iteration.
    pub k: usize,
    /// Re-keying period in multiples of the number of cache lines.
    pub rkp_multiple: f64,
    /// Prune round after which missing candidates are dropped instead of reloaded.
    pub aggressive_after: u32,
    pub eval_rounds: u64,
    pub metric: SuccessMetric,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            k: 16,
            rkp_multiple: 9.0,
            aggressive_after: 5,
            eval_rounds: 100_000,
            metric: SuccessMetric::Evict,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::config("k", "must be at least 1"));
        }
        if !(self.rkp_multiple.is_finite() && self.rkp_multiple > 0.0) {
            return Err(Error::config("rkp_multiple", "must be positive"));
        }
        if self.aggressive_after == 0 {
            return Err(Error::config("aggressive_after", "must be at least 1"));
        }
        Ok(())
    }

    /// Profiling access budget for a cache of `num_lines` lines.
    pub fn budget(&self, num_lines: u64) -> u64 {
        (self.rkp_multiple * num_lines as f64).floor() as u64
    }

    /// Upper bound on prune passes per iteration.
    pub fn max_prune_rounds(&self) -> u32 {
        3 * self.aggressive_after
    }
}

/// Where the victim line and the attacker's candidate lines live.
#[derive(Debug, Clone)]
pub struct AttackSurface {
    pub victim: LineAddress,
    pub victim_domain: SecurityDomain,
    pub attacker_domain: SecurityDomain,
    /// Line addresses the attacker may draw candidates from.
    pub attacker_lines: Range<u64>,
}

impl AttackSurface {
    /// Checks that the victim sits in a high-protection page and that the
    /// attacker's range is normal-domain memory not containing the victim.
    pub fn new(domains: &DomainTable, victim: LineAddress, attacker_lines: Range<u64>) -> Result<Self> {
        let victim_domain = *domains.domain_of(victim)?;
        if victim_domain.sdid != Sdid::High {
            return Err(Error::config("victim", "victim page is not in the high-protection domain"));
        }
        if attacker_lines.is_empty() {
            return Err(Error::config("attacker_lines", "empty attacker address range"));
        }
        if attacker_lines.contains(&victim.0) {
            return Err(Error::config("attacker_lines", "attacker range contains the victim"));
        }
        let first = domains.domain_of(LineAddress(attacker_lines.start))?;
        let last = domains.domain_of(LineAddress(attacker_lines.end - 1))?;
        if first.sdid != Sdid::Normal || last.sdid != Sdid::Normal {
            return Err(Error::config("attacker_lines", "attacker range is not normal-domain memory"));
        }
        Ok(AttackSurface {
            victim,
            victim_domain,
            attacker_domain: *first,
            attacker_lines,
        })
    }

    /// Lower half of the page space for the attacker, the first page above it
    /// for the victim, and a random victim line within that page.
    pub fn standard<R: Rng + ?Sized>(domains: &mut DomainTable, rng: &mut R) -> Result<Self> {
        let half = domains.num_pages() / 2;
        domains.register_region(PageId(0), half, Sdid::Normal)?;
        let victim_page = domains.register_page(PageId(half), Sdid::High)?;
        let lines = domains.lines_of(victim_page.id);
        let victim = LineAddress(rng.gen_range(lines));
        let attacker_lines = 0..half * domains.page_lines();
        Self::new(domains, victim, attacker_lines)
    }
}

/// A partially congruent eviction set captured during one re-keying period.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PceSet {
    pub members: Vec<LineAddress>,
    pub profiling_accesses_used: u64,
    /// Cache epoch the set was profiled in.
    pub epoch: u64,
    pub iterations: u64,
}

impl PceSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Cache handle that refuses accesses once the profiling budget is spent.
struct Budgeted<'a> {
    cache: &'a mut CacheState,
    used: u64,
    limit: u64,
}

impl Budgeted<'_> {
    /// `None` once the budget is exhausted, otherwise whether the access hit.
    fn access(&mut self, addr: LineAddress, domain: &SecurityDomain) -> Option<bool> {
        if self.used >= self.limit {
            return None;
        }
        self.used += 1;
        Some(self.cache.access(addr, domain).hit)
    }
}

fn draw_candidates<R: Rng + ?Sized>(k: usize, range: &Range<u64>, rng: &mut R) -> Vec<LineAddress> {
    let span = range.end - range.start;
    let k = k.min(span.min(usize::MAX as u64) as usize);
    let mut seen = HashSet::with_capacity(k);
    let mut out = Vec::with_capacity(k);
    while out.len() < k {
        let a = rng.gen_range(range.clone());
        if seen.insert(a) {
            out.push(LineAddress(a));
        }
    }
    out
}

/// One PPP iteration. Returns `None` when the budget ran out, otherwise the
/// candidate the victim displaced, if any.
fn ppp_iteration<R: Rng + ?Sized>(
    b: &mut Budgeted<'_>,
    surface: &AttackSurface,
    cfg: &AttackConfig,
    rng: &mut R,
) -> Option<Option<LineAddress>> {
    let att = surface.attacker_domain;
    let mut candidates = draw_candidates(cfg.k, &surface.attacker_lines, rng);

    for &c in &candidates {
        b.access(c, &att)?;
    }

    let mut settled = false;
    for round in 1..=cfg.max_prune_rounds() {
        let mut misses = 0;
        if round > cfg.aggressive_after {
            let mut kept = Vec::with_capacity(candidates.len());
            for &c in &candidates {
                if b.access(c, &att)? {
                    kept.push(c);
                } else {
                    misses += 1;
                }
            }
            candidates = kept;
        } else {
            for &c in &candidates {
                if !b.access(c, &att)? {
                    misses += 1;
                }
            }
        }
        if misses == 0 {
            settled = true;
            break;
        }
        if candidates.is_empty() {
            break;
        }
    }
    // Without a miss-free pass, a probe miss could not be attributed to the victim.
    if !settled || candidates.is_empty() {
        return Some(None);
    }

    b.access(surface.victim, &surface.victim_domain)?;

    // The victim's single fill displaces at most one line, so only the first
    // probe miss is victim-caused; later ones could come from probe reloads.
    for &c in &candidates {
        if !b.access(c, &att)? {
            return Some(Some(c));
        }
    }
    Some(None)
}

/// Builds a PCE set by repeating Prime+Prune+Probe until `rkp_multiple * N`
/// profiling accesses have been issued.
pub fn ppp_profile<R: Rng + ?Sized>(
    cache: &mut CacheState,
    surface: &AttackSurface,
    cfg: &AttackConfig,
    rng: &mut R,
) -> Result<PceSet> {
    cfg.validate()?;
    let limit = cfg.budget(cache.geometry().num_lines());
    let epoch = cache.epoch();
    let mut b = Budgeted { cache, used: 0, limit };
    let mut members = Vec::new();
    let mut seen = HashSet::new();
    let mut iterations = 0;
    while b.used < b.limit {
        iterations += 1;
        let outcome = ppp_iteration(&mut b, surface, cfg, rng);
        b.cache.flush();
        match outcome {
            None => break,
            Some(Some(m)) if m != surface.victim && seen.insert(m) => members.push(m),
            Some(_) => {}
        }
    }
    Ok(PceSet {
        members,
        profiling_accesses_used: b.used,
        epoch,
        iterations,
    })
}

/// One Prime+Probe round against the victim with the profiled set.
pub fn prime_probe_round(
    cache: &mut CacheState,
    pce: &PceSet,
    surface: &AttackSurface,
    metric: SuccessMetric,
) -> Result<bool> {
    if pce.epoch != cache.epoch() {
        return Err(Error::StaleEvictionSet {
            set_epoch: pce.epoch,
            cache_epoch: cache.epoch(),
        });
    }
    if pce.is_empty() {
        return Ok(false);
    }
    let att = surface.attacker_domain;
    let vic = surface.victim_domain;
    cache.flush();
    cache.access(surface.victim, &vic);
    for &m in &pce.members {
        cache.access(m, &att);
    }
    Ok(match metric {
        SuccessMetric::Evict => !cache.contains(surface.victim, vic.h),
        SuccessMetric::Detect => {
            let reload = cache.access(surface.victim, &vic);
            reload.evicted.is_some_and(|e| pce.members.contains(&e))
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SuccessRate {
    pub successes: u64,
    pub rounds: u64,
}

impl SuccessRate {
    /// Fraction of successful rounds; 0 when no rounds ran.
    pub fn rate(&self) -> f64 {
        if self.rounds == 0 {
            0.0
        } else {
            self.successes as f64 / self.rounds as f64
        }
    }
}

pub fn attack_success_rate(
    cache: &mut CacheState,
    pce: &PceSet,
    surface: &AttackSurface,
    cfg: &AttackConfig,
) -> Result<SuccessRate> {
    let mut successes = 0;
    for _ in 0..cfg.eval_rounds {
        if prime_probe_round(cache, pce, surface, cfg.metric)? {
            successes += 1;
        }
    }
    Ok(SuccessRate { successes, rounds: cfg.eval_rounds })
}

/// Profile then evaluate on the same cache instance.
pub fn run_attack<R: Rng + ?Sized>(
    cache: &mut CacheState,
    surface: &AttackSurface,
    cfg: &AttackConfig,
    rng: &mut R,
) -> Result<(PceSet, SuccessRate)> {
    let pce = ppp_profile(cache, surface, cfg, rng)?;
    let rate = attack_success_rate(cache, &pce, surface, cfg)?;
    Ok((pce, rate))
}

#[derive(Debug, Clone, PartialEq)]
pub struct KSweepEntry {
    pub k: usize,
    pub pce_size: usize,
    pub rate: SuccessRate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KSweep {
    pub best_k: usize,
    pub best_rate: SuccessRate,
    pub per_k: Vec<KSweepEntry>,
}

/// Runs the whole pipeline once per candidate `K` and keeps the strongest.
///
/// `factory` supplies a fresh cache and attacker generator for each `K`.
/// Ties go to the smaller index in `k_values`.
pub fn optimal_k_sweep<R, F>(
    k_values: &[usize],
    template: &AttackConfig,
    surface: &AttackSurface,
    mut factory: F,
) -> Result<KSweep>
where
    R: Rng,
    F: FnMut(usize) -> (CacheState, R),
{
    if k_values.is_empty() {
        return Err(Error::config("k_values", "at least one K is required"));
    }
    let mut per_k = Vec::with_capacity(k_values.len());
    for &k in k_values {
        let cfg = AttackConfig { k, ..template.clone() };
        let (mut cache, mut rng) = factory(k);
        let (pce, rate) = run_attack(&mut cache, surface, &cfg, &mut rng)?;
        per_k.push(KSweepEntry { k, pce_size: pce.len(), rate });
    }
    let best = per_k
        .iter()
        .fold(&per_k[0], |best, e| if e.rate.rate() > best.rate.rate() { e } else { best });
    Ok(KSweep { best_k: best.k, best_rate: best.rate, per_k: per_k.clone() })
}
