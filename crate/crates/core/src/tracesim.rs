//! Trace-driven replay of two-core workloads through the cache model.
//!
//! Core 0 runs in the high-protection domain (window `VH`), core 1 in the
//! normal domain (window `AH`). A page is bound to the domain of the core
//! that touches it first; the other core reaches it through a duplicate.
//!
//! Text traces hold one record per line, `core_id address_hex [delta]`, with
//! `#` comments and blank lines ignored. Binary traces are packed 13-byte
//! little-endian records (`u8` core, `u64` line address, `u32` delta), where
//! a delta of `u32::MAX` means "not given".

use std::io::{BufRead, Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cache::{CacheGeometry, CacheState, ReplacementPolicy};
use crate::cipher::LineAddress;
use crate::domains::{DomainTable, PageId, Sdid, DEFAULT_PAGE_LINES};
use crate::error::{Error, Result};

const BINARY_RECORD_BYTES: usize = 13;
const NO_DELTA: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceRecord {
    pub core_id: u8,
    pub line_address: LineAddress,
    /// Instructions retired since the previous record; 1 when absent.
    pub instruction_delta: Option<u32>,
}

impl TraceRecord {
    pub fn new(core_id: u8, line_address: u64) -> Self {
        TraceRecord { core_id, line_address: LineAddress(line_address), instruction_delta: None }
    }

    pub fn sdid(&self) -> Sdid {
        if self.core_id == 0 {
            Sdid::High
        } else {
            Sdid::Normal
        }
    }
}

fn parse_line(text: &str, line: usize) -> Result<Option<TraceRecord>> {
    let body = text.split('#').next().unwrap_or("").trim();
    if body.is_empty() {
        return Ok(None);
    }
    let err = |reason: String| Error::Parse { line, reason };
    let fields: Vec<&str> = body.split_whitespace().collect();
    if !(2..=3).contains(&fields.len()) {
        return Err(err(format!("expected 2 or 3 fields, found {}", fields.len())));
    }
    let core_id: u8 = fields[0]
        .parse()
        .map_err(|_| err(format!("bad core id `{}`", fields[0])))?;
    if core_id > 1 {
        return Err(err(format!("core id {core_id} is not 0 or 1")));
    }
    let hex = fields[1].trim_start_matches("0x").trim_start_matches("0X");
    let addr = u64::from_str_radix(hex, 16)
        .map_err(|_| err(format!("bad hex address `{}`", fields[1])))?;
    let instruction_delta = match fields.get(2) {
        None => None,
        Some(s) => Some(
            s.parse::<u32>()
                .ok()
                .filter(|&d| d != NO_DELTA)
                .ok_or_else(|| err(format!("bad instruction delta `{s}`")))?,
        ),
    };
    Ok(Some(TraceRecord { core_id, line_address: LineAddress(addr), instruction_delta }))
}

/// Streams records from a text trace. Errors carry 1-based line numbers.
pub fn read_text<R: BufRead>(reader: R) -> impl Iterator<Item = Result<TraceRecord>> {
    reader
        .lines()
        .enumerate()
        .filter_map(|(i, line)| match line {
            Ok(text) => parse_line(&text, i + 1).transpose(),
            Err(e) => Some(Err(Error::Io(e))),
        })
}

/// Streams records from a binary trace. Errors carry 1-based record numbers.
pub fn read_binary<R: Read>(mut reader: R) -> impl Iterator<Item = Result<TraceRecord>> {
    let mut index = 0usize;
    let mut done = false;
    std::iter::from_fn(move || {
        if done {
            return None;
        }
        index += 1;
        let mut buf = [0u8; BINARY_RECORD_BYTES];
        let mut filled = 0;
        while filled < BINARY_RECORD_BYTES {
            match reader.read(&mut buf[filled..]) {
                Ok(0) => break,
                Ok(n) => filled += n,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(e) => {
                    done = true;
                    return Some(Err(Error::Io(e)));
                }
            }
        }
        if filled == 0 {
            done = true;
            return None;
        }
        if filled < BINARY_RECORD_BYTES {
            done = true;
            return Some(Err(Error::Parse { line: index, reason: "truncated record".into() }));
        }
        let core_id = buf[0];
        if core_id > 1 {
            done = true;
            return Some(Err(Error::Parse {
                line: index,
                reason: format!("core id {core_id} is not 0 or 1"),
            }));
        }
        let addr = u64::from_le_bytes(buf[1..9].try_into().unwrap());
        let delta = u32::from_le_bytes(buf[9..13].try_into().unwrap());
        Some(Ok(TraceRecord {
            core_id,
            line_address: LineAddress(addr),
            instruction_delta: (delta != NO_DELTA).then_some(delta),
        }))
    })
}

pub fn write_text<W: Write>(records: &[TraceRecord], mut out: W) -> Result<()> {
    for r in records {
        match r.instruction_delta {
            Some(d) => writeln!(out, "{} {:x} {d}", r.core_id, r.line_address.0)?,
            None => writeln!(out, "{} {:x}", r.core_id, r.line_address.0)?,
        }
    }
    Ok(())
}

pub fn write_binary<W: Write>(records: &[TraceRecord], mut out: W) -> Result<()> {
    for r in records {
        out.write_all(&[r.core_id])?;
        out.write_all(&r.line_address.0.to_le_bytes())?;
        out.write_all(&r.instruction_delta.unwrap_or(NO_DELTA).to_le_bytes())?;
    }
    Ok(())
}

/// Counters for one core, or for both combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CoreMetrics {
    pub accesses: u64,
    pub misses: u64,
    pub instructions: u64,
    pub total_latency_cycles: u64,
}

impl CoreMetrics {
    pub fn miss_rate(&self) -> f64 {
        ratio(self.misses, self.accesses)
    }

    /// Misses per thousand instructions; equals misses per thousand accesses
    /// when the trace carries no instruction counts.
    pub fn mpki(&self) -> f64 {
        1000.0 * ratio(self.misses, self.instructions)
    }

    pub fn mean_latency(&self) -> f64 {
        ratio(self.total_latency_cycles, self.accesses)
    }

    fn add(&mut self, other: &CoreMetrics) {
        self.accesses += other.accesses;
        self.misses += other.misses;
        self.instructions += other.instructions;
        self.total_latency_cycles += other.total_latency_cycles;
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TraceMetrics {
    pub cores: [CoreMetrics; 2],
    pub total: CoreMetrics,
    /// Whether any record carried an explicit instruction delta. When false
    /// the `mpki` figures are really misses per thousand accesses.
    pub explicit_instructions: bool,
    pub rekeys: u64,
}

/// Column names of [`TraceMetrics::rows`].
pub const METRICS_HEADER: [&str; 8] = [
    "scope",
    "accesses",
    "misses",
    "miss_rate",
    "instructions",
    "mpki",
    "total_latency_cycles",
    "mean_latency",
];

impl TraceMetrics {
    /// One row per core plus the combined row, in [`METRICS_HEADER`] order.
    pub fn rows(&self) -> Vec<Vec<String>> {
        let scopes = [("core0", &self.cores[0]), ("core1", &self.cores[1]), ("total", &self.total)];
        scopes
            .into_iter()
            .map(|(scope, m)| {
                vec![
                    scope.to_string(),
                    m.accesses.to_string(),
                    m.misses.to_string(),
                    m.miss_rate().to_string(),
                    m.instructions.to_string(),
                    m.mpki().to_string(),
                    m.total_latency_cycles.to_string(),
                    m.mean_latency().to_string(),
                ]
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(METRICS_HEADER)?;
        for row in self.rows() {
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Human-readable aligned summary.
    pub fn summary(&self) -> String {
        let unit = if self.explicit_instructions { "MPKI" } else { "MPKA" };
        let mut s = format!(
            "{:<6} {:>12} {:>10} {:>9} {:>9} {:>10}\n",
            "scope", "accesses", "misses", "miss%", unit, "latency"
        );
        let rows = [("core0", &self.cores[0]), ("core1", &self.cores[1]), ("total", &self.total)];
        for (scope, m) in rows {
            s += &format!(
                "{:<6} {:>12} {:>10} {:>9.3} {:>9.3} {:>10.3}\n",
                scope,
                m.accesses,
                m.misses,
                100.0 * m.miss_rate(),
                m.mpki(),
                m.mean_latency()
            );
        }
        s += &format!("rekeys: {}\n", self.rekeys);
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceParams {
    pub vh: u32,
    pub ah: u32,
    /// Re-key whenever this many accesses have been made under the current keys.
    pub rekey_every: Option<u64>,
    pub seed: u64,
}

/// Replays `trace` in order through a fresh cache with invalid-slot-first
/// fill and returns per-core and combined counters.
pub fn run_trace<I>(trace: I, geometry: &CacheGeometry, params: &TraceParams) -> Result<TraceMetrics>
where
    I: IntoIterator<Item = Result<TraceRecord>>,
{
    let sets = geometry.sets_per_way() as u32;
    for (key, h) in [("vh", params.vh), ("ah", params.ah)] {
        if h == 0 || h > sets {
            return Err(Error::config(key, format!("{h} outside [1, {sets}]")));
        }
    }
    if params.rekey_every == Some(0) {
        return Err(Error::config("rekey_every", "must be at least 1"));
    }
    let addr_bits = geometry.line_address_bits();
    let mut domains =
        DomainTable::with_layout(params.ah, params.vh, DEFAULT_PAGE_LINES, addr_bits)?;
    let mut cache =
        CacheState::new(*geometry, params.seed).with_policy(ReplacementPolicy::InvalidFirst);
    let mut metrics = TraceMetrics::default();

    for (i, record) in trace.into_iter().enumerate() {
        let record = record?;
        if addr_bits < 64 && record.line_address.0 >> addr_bits != 0 {
            return Err(Error::Parse {
                line: i + 1,
                reason: format!("address {:#x} exceeds {addr_bits} bits", record.line_address.0),
            });
        }
        let sdid = record.sdid();
        let page_id = domains.page_of(record.line_address);
        let page = match domains.page(page_id) {
            Ok(p) => p,
            Err(_) => domains.register_page(page_id, sdid)?,
        };
        let page = domains.share_page(&page, sdid)?;
        let addr = domains.translate(record.line_address, page.id);
        let domain = *domains.domain(sdid);

        let result = cache.access(addr, &domain);
        let m = &mut metrics.cores[record.core_id as usize];
        m.accesses += 1;
        m.misses += u64::from(!result.hit);
        m.total_latency_cycles += u64::from(result.latency_cycles);
        m.instructions += u64::from(record.instruction_delta.unwrap_or(1));
        metrics.explicit_instructions |= record.instruction_delta.is_some();

        if params.rekey_every.is_some_and(|n| cache.access_counter() >= n) {
            cache.rekey();
            metrics.rekeys += 1;
        }
    }
    let [c0, c1] = metrics.cores;
    metrics.total.add(&c0);
    metrics.total.add(&c1);
    Ok(metrics)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TraceKind {
    /// Uniform random accesses over `lines` distinct lines on one core.
    WorkingSet { core_id: u8, lines: u64 },
    /// `0, stride, 2*stride, ...` wrapping after `lines` distinct lines.
    Strided { core_id: u8, stride: u64, lines: u64 },
    /// Two disjoint working sets interleaved `core0_weight : core1_weight`.
    MixedTwoCore { lines_per_core: u64, core0_weight: u32, core1_weight: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthParams {
    pub kind: TraceKind,
    pub length: usize,
    /// First line address used by the generator.
    pub base_line: u64,
    /// Constant instruction delta attached to every record, if any.
    pub instruction_delta: Option<u32>,
}

/// Deterministic synthetic trace for `seed`.
pub fn synth_trace(params: &SynthParams, seed: u64) -> Result<Vec<TraceRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = params.base_line;
    let record = |core_id: u8, addr: u64| TraceRecord {
        core_id,
        line_address: LineAddress(addr),
        instruction_delta: params.instruction_delta,
    };
    let check_core = |c: u8| {
        if c > 1 {
            Err(Error::config("core_id", format!("{c} is not 0 or 1")))
        } else {
            Ok(())
        }
    };
    match params.kind {
        TraceKind::WorkingSet { core_id, lines } => {
            check_core(core_id)?;
            if lines == 0 {
                return Err(Error::config("lines", "working set must hold at least one line"));
            }
            Ok((0..params.length)
                .map(|_| record(core_id, base + rng.gen_range(0..lines)))
                .collect())
        }
        TraceKind::Strided { core_id, stride, lines } => {
            check_core(core_id)?;
            if lines == 0 || stride == 0 {
                return Err(Error::config("stride", "stride and line count must be positive"));
            }
            Ok((0..params.length as u64)
                .map(|i| record(core_id, base + (i % lines) * stride))
                .collect())
        }
        TraceKind::MixedTwoCore { lines_per_core, core0_weight, core1_weight } => {
            if lines_per_core == 0 {
                return Err(Error::config("lines", "working set must hold at least one line"));
            }
            if core0_weight == 0 || core1_weight == 0 {
                return Err(Error::config("ratio", "both cores need a positive weight"));
            }
            // Keep the two working sets on separate pages.
            let span = lines_per_core.div_ceil(DEFAULT_PAGE_LINES) * DEFAULT_PAGE_LINES;
            let total = u64::from(core0_weight) + u64::from(core1_weight);
            let mut issued0 = 0u64;
            Ok((0..params.length as u64)
                .map(|i| {
                    // Bresenham interleave: core 0 count tracks the ratio exactly.
                    let due0 = (i + 1) * u64::from(core0_weight) / total;
                    let core = if due0 > issued0 {
                        issued0 += 1;
                        0
                    } else {
                        1
                    };
                    let offset = rng.gen_range(0..lines_per_core);
                    record(core, base + u64::from(core) * span + offset)
                })
                .collect())
        }
    }
}

/// Page that `addr` would belong to on the default page size.
pub fn page_of(addr: LineAddress) -> PageId {
    PageId(addr.0 / DEFAULT_PAGE_LINES)
}
