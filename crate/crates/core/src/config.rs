//! Run configuration: a fixed table of keys grouped into sections, layered
//! from defaults, a TOML file, `SEACACHE_*` environment variables and
//! command-line `key=value` overrides (later layers win).
//!
//! Keys may be given bare (`vh = 8`), inside their section (`[domains]`), or
//! dotted (`domains.vh`). Lists are TOML arrays or comma-separated strings.

use std::fmt;
use std::path::Path;

use crate::attack::SuccessMetric;
use crate::cache::CacheGeometry;
use crate::error::{Error, Result};
use crate::experiments::{TABLE1_CONFIGS, TABLE1_K, TABLE1_RKP};
use crate::tracesim::TraceKind;

pub const ENV_PREFIX: &str = "SEACACHE_";

/// Section name reserved for run metadata in manifests; ignored on input.
pub const MANIFEST_SECTION: &str = "manifest";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Int,
    Float,
    Str,
    IntList,
    FloatList,
    PairList,
}

struct KeySpec {
    section: &'static str,
    name: &'static str,
    kind: Kind,
    default: &'static str,
}

const fn key(section: &'static str, name: &'static str, kind: Kind, default: &'static str) -> KeySpec {
    KeySpec { section, name, kind, default }
}

const KEYS: &[KeySpec] = &[
    key("geometry", "total_size_bytes", Kind::Int, "8388608"),
    key("geometry", "line_size_bytes", Kind::Int, "64"),
    key("geometry", "num_ways", Kind::Int, "16"),
    key("geometry", "num_banks", Kind::Int, "8"),
    key("geometry", "address_bits", Kind::Int, "46"),
    key("geometry", "scale", Kind::Int, "1"),
    key("domains", "vh", Kind::Int, "1"),
    key("domains", "ah", Kind::Int, "1"),
    key("attack", "aggressive_after", Kind::Int, "5"),
    key("attack", "eval_rounds", Kind::Int, "100000"),
    key("attack", "metric", Kind::Str, "evict"),
    key("sweep", "configs", Kind::PairList, ""),
    key("sweep", "rkps", Kind::FloatList, ""),
    key("sweep", "k_values", Kind::IntList, ""),
    key("sweep", "seeds", Kind::Int, "10"),
    key("sweep", "master_seed", Kind::Int, "1"),
    key("sweep", "workers", Kind::Int, "0"),
    key("trace", "file", Kind::Str, ""),
    key("trace", "kind", Kind::Str, "mixed-two-core"),
    key("trace", "length_multiple", Kind::Float, "100"),
    key("trace", "working_set", Kind::Float, "0.75"),
    key("trace", "core_id", Kind::Int, "0"),
    key("trace", "stride", Kind::Int, "1"),
    key("trace", "core0_weight", Kind::Int, "1"),
    key("trace", "core1_weight", Kind::Int, "1"),
    key("trace", "instructions_per_access", Kind::Int, "0"),
    key("trace", "rekey_multiple", Kind::Float, "9"),
    key("trace", "seeds", Kind::Int, "1"),
];

fn table1_defaults(name: &str) -> Option<String> {
    match name {
        "configs" => Some(TABLE1_CONFIGS.iter().map(|(v, a)| format!("{v}/{a}")).collect::<Vec<_>>().join(",")),
        "rkps" => Some(TABLE1_RKP.iter().map(f64::to_string).collect::<Vec<_>>().join(",")),
        "k_values" => Some(TABLE1_K.iter().map(usize::to_string).collect::<Vec<_>>().join(",")),
        _ => None,
    }
}

fn find_key(name: &str) -> Result<usize> {
    let (section, bare) = match name.split_once('.') {
        Some((s, k)) => (Some(s), k),
        None => (None, name),
    };
    KEYS.iter()
        .position(|k| k.name == bare && section.is_none_or(|s| s == k.section))
        .ok_or_else(|| Error::config(name, "unknown configuration key"))
}

/// Where a value came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Default,
    File,
    Env,
    Cli,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Default => "default",
            Source::File => "file",
            Source::Env => "env",
            Source::Cli => "cli",
        })
    }
}

/// Unvalidated key/value layers, one canonical string per key.
#[derive(Debug, Clone)]
pub struct RawConfig {
    values: Vec<(String, Source)>,
}

impl Default for RawConfig {
    fn default() -> Self {
        let values = KEYS
            .iter()
            .map(|k| {
                let v = table1_defaults(k.name).unwrap_or_else(|| k.default.to_string());
                (v, Source::Default)
            })
            .collect();
        RawConfig { values }
    }
}

fn canonical(key: &str, value: &toml::Value) -> Result<String> {
    Ok(match value {
        toml::Value::String(s) => s.clone(),
        toml::Value::Integer(i) => i.to_string(),
        toml::Value::Float(f) => f.to_string(),
        toml::Value::Boolean(b) => b.to_string(),
        toml::Value::Array(items) => items
            .iter()
            .map(|v| canonical(key, v))
            .collect::<Result<Vec<_>>>()?
            .join(","),
        _ => return Err(Error::config(key, "unsupported value type")),
    })
}

impl RawConfig {
    /// Sets one key; `name` may be bare or `section.key`.
    pub fn set(&mut self, name: &str, value: &str, source: Source) -> Result<()> {
        let i = find_key(name.trim())?;
        self.values[i] = (value.trim().trim_matches('"').to_string(), source);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<(&str, Source)> {
        let i = find_key(name)?;
        Ok((self.values[i].0.as_str(), self.values[i].1))
    }

    pub fn merge_toml(&mut self, text: &str) -> Result<()> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Parse { line: toml_line(text, &e), reason: e.message().to_string() })?;
        for (name, value) in &table {
            match value {
                toml::Value::Table(_) if name == MANIFEST_SECTION => {}
                toml::Value::Table(inner) => {
                    for (k, v) in inner {
                        let full = format!("{name}.{k}");
                        if matches!(v, toml::Value::Table(_)) {
                            return Err(Error::config(full, "nested tables are not supported"));
                        }
                        self.set(&full, &canonical(&full, v)?, Source::File)?;
                    }
                }
                v => self.set(name, &canonical(name, v)?, Source::File)?,
            }
        }
        Ok(())
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        self.merge_toml(&text)
    }

    /// Applies every `SEACACHE_<KEY>` variable, e.g. `SEACACHE_VH=8`.
    pub fn merge_env<I: IntoIterator<Item = (String, String)>>(&mut self, vars: I) -> Result<()> {
        for (name, value) in vars {
            if let Some(key) = name.strip_prefix(ENV_PREFIX) {
                let key = key.to_ascii_lowercase();
                if let Some((section, rest)) = key.split_once("__") {
                    self.set(&format!("{section}.{rest}"), &value, Source::Env)?;
                } else {
                    self.set(&key, &value, Source::Env)?;
                }
            }
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn merge_assignment(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::config(assignment, "expected key=value"))?;
        self.set(k, v, Source::Cli)
    }

    /// `(section.key, value)` for every key still at its default.
    pub fn defaulted(&self) -> Vec<(String, String)> {
        KEYS.iter()
            .zip(&self.values)
            .filter(|(_, (_, src))| *src == Source::Default)
            .map(|(k, (v, _))| (format!("{}.{}", k.section, k.name), v.clone()))
            .collect()
    }

    /// Every key as a sectioned TOML document.
    pub fn to_toml_table(&self) -> toml::Table {
        let mut root = toml::Table::new();
        for (spec, (value, _)) in KEYS.iter().zip(&self.values) {
            let section = root
                .entry(spec.section)
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            let toml::Value::Table(t) = section else { unreachable!() };
            t.insert(spec.name.to_string(), echo_value(spec.kind, value));
        }
        root
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_toml_table()).expect("config tables always serialise")
    }

    pub fn resolve(&self) -> Result<RunConfig> {
        RunConfig::from_raw(self)
    }
}

fn toml_line(text: &str, e: &toml::de::Error) -> usize {
    e.span().map_or(0, |s| text[..s.start.min(text.len())].lines().count().max(1))
}

fn split_list(value: &str) -> impl Iterator<Item = &str> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty())
}

fn echo_value(kind: Kind, value: &str) -> toml::Value {
    let scalar = |s: &str| match kind {
        Kind::Int | Kind::IntList => s.parse::<i64>().map(toml::Value::Integer).ok(),
        Kind::Float | Kind::FloatList => s.parse::<f64>().map(toml::Value::Float).ok(),
        _ => None,
    }
    .unwrap_or_else(|| toml::Value::String(s.to_string()));
    match kind {
        Kind::IntList | Kind::FloatList | Kind::PairList => {
            toml::Value::Array(split_list(value).map(scalar).collect())
        }
        _ => scalar(value),
    }
}

/// Profiling and evaluation settings shared by every cell; K and the
/// re-keying period come from the sweep lists.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackParams {
    pub aggressive_after: u32,
    pub eval_rounds: u64,
    pub metric: SuccessMetric,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub configs: Vec<(u32, u32)>,
    pub rkps: Vec<f64>,
    pub k_values: Vec<usize>,
    pub seeds: usize,
    pub master_seed: u64,
    /// 0 means one worker per available core.
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceConfig {
    pub file: Option<String>,
    pub kind: TraceKind,
    pub length: usize,
    pub instructions_per_access: Option<u32>,
    pub rekey_every: Option<u64>,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Full-size geometry before scaling.
    pub base_geometry: CacheGeometry,
    pub scale: u64,
    /// Geometry actually simulated.
    pub geometry: CacheGeometry,
    pub vh: u32,
    pub ah: u32,
    pub attack: AttackParams,
    pub sweep: SweepConfig,
    pub trace: TraceConfig,
}

struct Reader<'a>(&'a RawConfig);

impl Reader<'_> {
    fn raw(&self, name: &str) -> &str {
        self.0.get(name).expect("key table is static").0
    }

    fn int<T: std::str::FromStr>(&self, name: &str) -> Result<T> {
        let v = self.raw(name);
        v.parse().map_err(|_| Error::config(name, format!("`{v}` is not a valid integer in range")))
    }

    fn positive<T: std::str::FromStr + PartialOrd + Default>(&self, name: &str) -> Result<T> {
        let v: T = self.int(name)?;
        if v <= T::default() {
            return Err(Error::config(name, "must be positive"));
        }
        Ok(v)
    }

    fn float(&self, name: &str) -> Result<f64> {
        let v = self.raw(name);
        match v.parse::<f64>() {
            Ok(f) if f.is_finite() => Ok(f),
            _ => Err(Error::config(name, format!("`{v}` is not a finite number"))),
        }
    }

    fn list<T: std::str::FromStr>(&self, name: &str) -> Result<Vec<T>> {
        let items = split_list(self.raw(name))
            .map(|s| s.parse().map_err(|_| Error::config(name, format!("bad list item `{s}`"))))
            .collect::<Result<Vec<T>>>()?;
        if items.is_empty() {
            return Err(Error::config(name, "list is empty"));
        }
        Ok(items)
    }
}

fn parse_pair(name: &str, s: &str) -> Result<(u32, u32)> {
    let err = || Error::config(name, format!("`{s}` is not of the form VH/AH"));
    let (vh, ah) = s.split_once('/').ok_or_else(err)?;
    let vh = vh.trim().parse().map_err(|_| err())?;
    let ah = ah.trim().parse().map_err(|_| err())?;
    Ok((vh, ah))
}

fn check_window(name: &str, h: u32, sets: usize) -> Result<()> {
    if h == 0 || h as usize > sets {
        return Err(Error::config(name, format!("{h} outside [1, {sets}] sets per way")));
    }
    Ok(())
}

impl RunConfig {
    fn from_raw(raw: &RawConfig) -> Result<Self> {
        let r = Reader(raw);
        let base_geometry = CacheGeometry::new(
            r.int("line_size_bytes")?,
            r.int("total_size_bytes")?,
            r.int("num_ways")?,
            r.int("num_banks")?,
            r.int("address_bits")?,
        )?;
        let scale: u64 = r.positive("scale")?;
        let geometry = base_geometry.scaled(scale)?;
        let sets = geometry.sets_per_way();

        let vh: u32 = r.int("vh")?;
        let ah: u32 = r.int("ah")?;
        check_window("vh", vh, sets)?;
        check_window("ah", ah, sets)?;

        let metric: SuccessMetric = r
            .raw("metric")
            .parse()
            .map_err(|e: Error| Error::config("metric", e.to_string()))?;
        let attack = AttackParams {
            aggressive_after: r.positive("aggressive_after")?,
            eval_rounds: r.positive("eval_rounds")?,
            metric,
        };

        let configs = split_list(r.raw("configs"))
            .map(|s| parse_pair("configs", s))
            .collect::<Result<Vec<_>>>()?;
        if configs.is_empty() {
            return Err(Error::config("configs", "list is empty"));
        }
        for &(v, a) in &configs {
            check_window("configs", v, sets)?;
            check_window("configs", a, sets)?;
        }
        let rkps: Vec<f64> = r.list("rkps")?;
        if rkps.iter().any(|&x| !(x.is_finite() && x > 0.0)) {
            return Err(Error::config("rkps", "periods must be positive"));
        }
        let k_values: Vec<usize> = r.list("k_values")?;
        if k_values.contains(&0) {
            return Err(Error::config("k_values", "K must be positive"));
        }
        let sweep = SweepConfig {
            configs,
            rkps,
            k_values,
            seeds: r.positive("seeds")?,
            master_seed: r.int("master_seed")?,
            workers: r.int("workers")?,
        };

        let n = geometry.num_lines() as f64;
        let lines_of = |name: &str| -> Result<u64> {
            let f = r.float(name)?;
            let lines = (f * n).round();
            if !(lines >= 1.0) {
                return Err(Error::config(name, "must cover at least one line"));
            }
            Ok(lines as u64)
        };
        let core_id: u8 = r.int("core_id")?;
        let kind = match r.raw("kind") {
            "working-set" => TraceKind::WorkingSet { core_id, lines: lines_of("working_set")? },
            "strided" => TraceKind::Strided {
                core_id,
                stride: r.positive("stride")?,
                lines: lines_of("working_set")?,
            },
            "mixed-two-core" => TraceKind::MixedTwoCore {
                lines_per_core: lines_of("working_set")?,
                core0_weight: r.positive("core0_weight")?,
                core1_weight: r.positive("core1_weight")?,
            },
            other => {
                return Err(Error::config(
                    "kind",
                    format!("`{other}` is not working-set, strided or mixed-two-core"),
                ))
            }
        };
        let rekey = r.float("rekey_multiple")?;
        if rekey < 0.0 {
            return Err(Error::config("rekey_multiple", "must not be negative"));
        }
        let ipa: u32 = r.int("instructions_per_access")?;
        let file = r.raw("file");
        let trace = TraceConfig {
            file: (!file.is_empty()).then(|| file.to_string()),
            kind,
            length: lines_of("length_multiple")? as usize,
            instructions_per_access: (ipa > 0).then_some(ipa),
            rekey_every: (rekey > 0.0).then(|| ((rekey * n).round() as u64).max(1)),
            seeds: r.positive("trace.seeds")?,
        };

        Ok(RunConfig {
            base_geometry,
            scale,
            geometry,
            vh,
            ah,
            attack,
            sweep,
            trace,
        })
    }

    /// Worker count with 0 resolved to the available parallelism.
    pub fn workers(&self) -> usize {
        match self.sweep.workers {
            0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
            w => w,
        }
    }
}
