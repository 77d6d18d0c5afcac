//! Grid runner for the attack success tables: one cell per
//! (VH, AH, RKP, K, seed), aggregated into per-configuration rates with
//! Wilson score intervals and written as CSV.

use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::attack::{run_attack, AttackConfig, AttackSurface, SuccessMetric};
use crate::cache::{CacheGeometry, CacheState, ReplacementPolicy};
use crate::domains::DomainTable;
use crate::error::{Error, Result};

/// `(VH, AH)` columns of the published success-rate table.
pub const TABLE1_CONFIGS: [(u32, u32); 12] = [
    (1, 1),
    (2, 1),
    (3, 1),
    (4, 1),
    (5, 1),
    (6, 1),
    (8, 1),
    (16, 1),
    (24, 1),
    (8, 8),
    (8, 16),
    (8, 24),
];

/// Re-keying periods of the published table, in multiples of N.
pub const TABLE1_RKP: [f64; 15] = [
    9.0, 10.0, 15.0, 20.0, 22.0, 25.0, 29.0, 30.0, 35.0, 40.0, 45.0, 50.0, 75.0, 100.0, 200.0,
];

pub const TABLE1_K: [usize; 4] = [16, 32, 64, 128];

pub const CSV_HEADER: [&str; 13] = [
    "vh",
    "ah",
    "rkp_multiple",
    "k",
    "seed",
    "pce_size",
    "rounds",
    "successes",
    "success_rate",
    "ci_low",
    "ci_high",
    "wall_time_s",
    "error",
];

/// SplitMix64 finaliser; used to derive independent seeds from a master seed.
pub fn mix_seed(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of cell `index` under `master`. Independent of execution order.
pub fn cell_seed(master: u64, index: u64) -> u64 {
    mix_seed(mix_seed(master) ^ index)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSpec {
    pub vh: u32,
    pub ah: u32,
    pub rkp_multiple: f64,
    pub k: usize,
    pub seed: u64,
    pub eval_rounds: u64,
    pub aggressive_after: u32,
    pub metric: SuccessMetric,
}

impl CellSpec {
    pub fn new(vh: u32, ah: u32, rkp_multiple: f64, k: usize, seed: u64, eval_rounds: u64) -> Self {
        let d = AttackConfig::default();
        CellSpec {
            vh,
            ah,
            rkp_multiple,
            k,
            seed,
            eval_rounds,
            aggressive_after: d.aggressive_after,
            metric: d.metric,
        }
    }

    pub fn attack_config(&self) -> AttackConfig {
        AttackConfig {
            k: self.k,
            rkp_multiple: self.rkp_multiple,
            aggressive_after: self.aggressive_after,
            eval_rounds: self.eval_rounds,
            metric: self.metric,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRecord {
    pub vh: u32,
    pub ah: u32,
    pub rkp_multiple: f64,
    pub k: usize,
    pub seed: u64,
    pub pce_size: usize,
    pub rounds: u64,
    pub successes: u64,
    pub success_rate: f64,
    pub wilson_ci_low: f64,
    pub wilson_ci_high: f64,
    pub wall_time_s: f64,
    /// Set when the cell failed; the result fields are then meaningless.
    pub error: Option<String>,
}

impl ExperimentRecord {
    fn failed(spec: &CellSpec, err: &Error) -> Self {
        ExperimentRecord {
            vh: spec.vh,
            ah: spec.ah,
            rkp_multiple: spec.rkp_multiple,
            k: spec.k,
            seed: spec.seed,
            pce_size: 0,
            rounds: 0,
            successes: 0,
            success_rate: 0.0,
            wilson_ci_low: 0.0,
            wilson_ci_high: 0.0,
            wall_time_s: 0.0,
            error: Some(err.to_string()),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

/// Two-sided Wilson score interval for a binomial proportion.
pub fn wilson_interval(successes: u64, rounds: u64, confidence: f64) -> Result<(f64, f64)> {
    if rounds == 0 {
        return Err(Error::config("rounds", "Wilson interval needs at least one trial"));
    }
    if successes > rounds {
        return Err(Error::config("successes", "more successes than trials"));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::config("confidence", "must lie strictly between 0 and 1"));
    }
    let z = Normal::standard().inverse_cdf(1.0 - (1.0 - confidence) / 2.0);
    let n = rounds as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    let low = if successes == 0 { 0.0 } else { (centre - half).max(0.0) };
    let high = if successes == rounds { 1.0 } else { (centre + half).min(1.0) };
    Ok((low, high))
}

/// Seeds of the cache (keys and replacement) and of the attacker for one cell.
fn cell_rngs(seed: u64) -> (u64, ChaCha8Rng) {
    (mix_seed(seed ^ 0x5ea_cac4e), ChaCha8Rng::seed_from_u64(mix_seed(seed ^ 0xa77ac4)))
}

/// Builds a fresh cache and domain table, profiles, evaluates and records.
pub fn run_cell(geometry: &CacheGeometry, spec: &CellSpec) -> Result<ExperimentRecord> {
    let start = Instant::now();
    if spec.eval_rounds == 0 {
        return Err(Error::config("eval_rounds", "at least one Prime+Probe round is required"));
    }
    let sets = geometry.sets_per_way() as u32;
    for (key, h) in [("vh", spec.vh), ("ah", spec.ah)] {
        if h == 0 || h > sets {
            return Err(Error::config(key, format!("{h} outside [1, {sets}]")));
        }
    }
    let cfg = spec.attack_config();
    cfg.validate()?;

    let (cache_seed, mut rng) = cell_rngs(spec.seed);
    let mut domains = DomainTable::with_layout(
        spec.ah,
        spec.vh,
        crate::domains::DEFAULT_PAGE_LINES,
        geometry.line_address_bits(),
    )?;
    let surface = AttackSurface::standard(&mut domains, &mut rng)?;
    let mut cache = CacheState::new(*geometry, cache_seed).with_policy(ReplacementPolicy::Random);
    let (pce, rate) = run_attack(&mut cache, &surface, &cfg, &mut rng)?;
    let (low, high) = wilson_interval(rate.successes, rate.rounds, 0.95)?;
    Ok(ExperimentRecord {
        vh: spec.vh,
        ah: spec.ah,
        rkp_multiple: spec.rkp_multiple,
        k: spec.k,
        seed: spec.seed,
        pce_size: pce.len(),
        rounds: rate.rounds,
        successes: rate.successes,
        success_rate: rate.rate(),
        wilson_ci_low: low,
        wilson_ci_high: high,
        wall_time_s: start.elapsed().as_secs_f64(),
        error: None,
    })
}

/// Runs every cell on `parallelism` workers. Records come back in input
/// order; failed cells carry their error instead of results.
pub fn run_grid(
    geometry: &CacheGeometry,
    cells: &[CellSpec],
    parallelism: usize,
) -> Result<Vec<ExperimentRecord>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::config("workers", e.to_string()))?;
    Ok(pool.install(|| {
        cells
            .par_iter()
            .map(|spec| {
                run_cell(geometry, spec).unwrap_or_else(|e| {
                    log::warn!("cell vh={} ah={} rkp={} k={} failed: {e}", spec.vh, spec.ah, spec.rkp_multiple, spec.k);
                    ExperimentRecord::failed(spec, &e)
                })
            })
            .collect()
    }))
}

pub fn write_records_csv<W: Write>(records: &[ExperimentRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in records {
        let row: Vec<String> = match &r.error {
            None => vec![
                r.vh.to_string(),
                r.ah.to_string(),
                r.rkp_multiple.to_string(),
                r.k.to_string(),
                r.seed.to_string(),
                r.pce_size.to_string(),
                r.rounds.to_string(),
                r.successes.to_string(),
                r.success_rate.to_string(),
                r.wilson_ci_low.to_string(),
                r.wilson_ci_high.to_string(),
                format!("{:.3}", r.wall_time_s),
                String::new(),
            ],
            Some(e) => {
                let mut row = vec![
                    r.vh.to_string(),
                    r.ah.to_string(),
                    r.rkp_multiple.to_string(),
                    r.k.to_string(),
                    r.seed.to_string(),
                ];
                row.extend(std::iter::repeat_n(String::new(), 7));
                row.push(e.clone());
                row
            }
        };
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Pooled result of every seed of one `(VH, AH, RKP, K)` configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigSummary {
    pub vh: u32,
    pub ah: u32,
    pub rkp_multiple: f64,
    pub k: usize,
    pub seeds: usize,
    pub successes: u64,
    pub rounds: u64,
    pub success_rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub mean_pce_size: f64,
}

/// Groups successful records by configuration, in order of first appearance.
pub fn aggregate(records: &[ExperimentRecord]) -> Vec<ConfigSummary> {
    let mut out: Vec<ConfigSummary> = Vec::new();
    let mut pce_totals: Vec<usize> = Vec::new();
    for r in records.iter().filter(|r| r.is_ok()) {
        let pos = out.iter().position(|s| {
            s.vh == r.vh && s.ah == r.ah && s.rkp_multiple == r.rkp_multiple && s.k == r.k
        });
        let i = pos.unwrap_or_else(|| {
            out.push(ConfigSummary {
                vh: r.vh,
                ah: r.ah,
                rkp_multiple: r.rkp_multiple,
                k: r.k,
                seeds: 0,
                successes: 0,
                rounds: 0,
                success_rate: 0.0,
                ci_low: 0.0,
                ci_high: 0.0,
                mean_pce_size: 0.0,
            });
            pce_totals.push(0);
            out.len() - 1
        });
        let s = &mut out[i];
        s.seeds += 1;
        s.successes += r.successes;
        s.rounds += r.rounds;
        pce_totals[i] += r.pce_size;
    }
    for (s, pce) in out.iter_mut().zip(pce_totals) {
        s.success_rate = s.successes as f64 / s.rounds as f64;
        let (low, high) = wilson_interval(s.successes, s.rounds, 0.95).unwrap_or((0.0, 1.0));
        s.ci_low = low;
        s.ci_high = high;
        s.mean_pce_size = pce as f64 / s.seeds as f64;
    }
    out
}

/// Best configuration over K for each `(VH, AH, RKP)`; ties keep the first K.
pub fn optimal_k_table(summaries: &[ConfigSummary]) -> Vec<ConfigSummary> {
    let mut best: Vec<ConfigSummary> = Vec::new();
    for s in summaries {
        match best
            .iter_mut()
            .find(|b| b.vh == s.vh && b.ah == s.ah && b.rkp_multiple == s.rkp_multiple)
        {
            Some(b) if s.success_rate > b.success_rate => *b = s.clone(),
            Some(_) => {}
            None => best.push(s.clone()),
        }
    }
    best
}

pub fn write_summary_csv<W: Write>(rows: &[ConfigSummary], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "vh", "ah", "rkp_multiple", "k", "seeds", "successes", "rounds", "success_rate", "ci_low",
        "ci_high", "mean_pce_size",
    ])?;
    for s in rows {
        w.write_record([
            s.vh.to_string(),
            s.ah.to_string(),
            s.rkp_multiple.to_string(),
            s.k.to_string(),
            s.seeds.to_string(),
            s.successes.to_string(),
            s.rounds.to_string(),
            s.success_rate.to_string(),
            s.ci_low.to_string(),
            s.ci_high.to_string(),
            s.mean_pce_size.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Whitespace-separated table for plotting: one row per RKP, one column per
/// `VH/AH` configuration, values in percent.
pub fn write_plot_data<W: Write>(best: &[ConfigSummary], mut out: W) -> Result<()> {
    let mut configs: Vec<(u32, u32)> = Vec::new();
    let mut rkps: Vec<f64> = Vec::new();
    for b in best {
        if !configs.contains(&(b.vh, b.ah)) {
            configs.push((b.vh, b.ah));
        }
        if !rkps.contains(&b.rkp_multiple) {
            rkps.push(b.rkp_multiple);
        }
    }
    write!(out, "# rkp")?;
    for (vh, ah) in &configs {
        write!(out, " VH{vh}AH{ah}")?;
    }
    writeln!(out)?;
    for rkp in rkps {
        write!(out, "{rkp}")?;
        for &(vh, ah) in &configs {
            match best.iter().find(|b| b.vh == vh && b.ah == ah && b.rkp_multiple == rkp) {
                Some(b) => write!(out, " {:.4}", 100.0 * b.success_rate)?,
                None => write!(out, " NaN")?,
            }
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Cartesian grid over configurations, periods, K values and seeds, with
/// per-cell seeds derived from `master_seed` and the cell's position.
pub fn security_grid(
    configs: &[(u32, u32)],
    rkps: &[f64],
    ks: &[usize],
    seeds_per_config: usize,
    master_seed: u64,
    eval_rounds: u64,
) -> Vec<CellSpec> {
    let mut cells = Vec::new();
    for &(vh, ah) in configs {
        for &rkp in rkps {
            for &k in ks {
                for _ in 0..seeds_per_config {
                    let seed = cell_seed(master_seed, cells.len() as u64);
                    cells.push(CellSpec::new(vh, ah, rkp, k, seed, eval_rounds));
                }
            }
        }
    }
    cells
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> CacheGeometry {
        CacheGeometry::with_sets(4, 32, 1).unwrap()
    }

    #[test]
    fn wilson_edges() {
        let (low, _) = wilson_interval(0, 100, 0.95).unwrap();
        assert_eq!(low, 0.0);
        let (_, high) = wilson_interval(100, 100, 0.95).unwrap();
        assert_eq!(high, 1.0);
        assert!(wilson_interval(0, 0, 0.95).is_err());
        assert!(wilson_interval(5, 4, 0.95).is_err());
    }

    #[test]
    fn wilson_half() {
        // Closed form with z = 1.959964: centre 0.5, half-width 0.09617.
        let (low, high) = wilson_interval(50, 100, 0.95).unwrap();
        assert!((low - 0.404).abs() < 0.002, "{low}");
        assert!((high - 0.596).abs() < 0.002, "{high}");
    }

    #[test]
    fn zero_rounds_rejected() {
        let err = run_cell(&tiny(), &CellSpec::new(1, 1, 9.0, 4, 1, 0)).unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "eval_rounds"));
    }

    #[test]
    fn window_larger_than_partition_rejected() {
        assert!(run_cell(&tiny(), &CellSpec::new(33, 1, 9.0, 4, 1, 10)).is_err());
    }

    #[test]
    fn cell_is_deterministic() {
        let spec = CellSpec::new(2, 1, 9.0, 4, 42, 500);
        let mut a = run_cell(&tiny(), &spec).unwrap();
        let mut b = run_cell(&tiny(), &spec).unwrap();
        a.wall_time_s = 0.0;
        b.wall_time_s = 0.0;
        assert_eq!(a, b);
        assert!(a.wilson_ci_low <= a.success_rate && a.success_rate <= a.wilson_ci_high);
        assert_eq!(a.success_rate, a.successes as f64 / a.rounds as f64);
    }

    #[test]
    fn empty_grid_writes_header_only() {
        let mut buf = Vec::new();
        write_records_csv(&run_grid(&tiny(), &[], 2).unwrap(), &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), CSV_HEADER.join(",") + "\n");
    }

    #[test]
    fn failed_cells_keep_their_row() {
        let cells = vec![
            CellSpec::new(1, 1, 9.0, 4, 1, 50),
            CellSpec::new(1, 1, 9.0, 4, 2, 0),
        ];
        let records = run_grid(&tiny(), &cells, 2).unwrap();
        assert!(records[0].is_ok());
        assert!(!records[1].is_ok());
        let mut buf = Vec::new();
        write_records_csv(&records, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[2].contains("eval_rounds"));
    }

    #[test]
    fn aggregate_pools_seeds() {
        let cells = security_grid(&[(1, 1)], &[9.0], &[4, 8], 3, 7, 200);
        assert_eq!(cells.len(), 6);
        let records = run_grid(&tiny(), &cells, 1).unwrap();
        let summary = aggregate(&records);
        assert_eq!(summary.len(), 2);
        for s in &summary {
            let (succ, rounds) = records
                .iter()
                .filter(|r| r.k == s.k)
                .fold((0, 0), |(a, b), r| (a + r.successes, b + r.rounds));
            assert_eq!((s.successes, s.rounds, s.seeds), (succ, rounds, 3));
            assert_eq!(s.success_rate, succ as f64 / rounds as f64);
        }
        let best = optimal_k_table(&summary);
        assert_eq!(best.len(), 1);
        assert_eq!(best[0].success_rate, summary.iter().map(|s| s.success_rate).fold(0.0, f64::max));
    }

    #[test]
    fn cell_seeds_are_distinct() {
        let cells = security_grid(&TABLE1_CONFIGS, &TABLE1_RKP, &TABLE1_K, 10, 1, 1);
        let mut seeds: Vec<u64> = cells.iter().map(|c| c.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), 12 * 15 * 4 * 10);
    }
}
