//! Command-line front end. Every subcommand resolves the layered
//! configuration, writes a run directory (config echo, manifest, outputs)
//! and returns a process exit code.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::config::{RawConfig, RunConfig, MANIFEST_SECTION};
use crate::error::{Error, Result};
use crate::experiments::{
    aggregate, cell_seed, mix_seed, optimal_k_table, run_grid, security_grid, write_plot_data,
    write_records_csv, write_summary_csv, ConfigSummary,
};
use crate::overhead::{latency_table, overhead_rows};
use crate::tracesim::{
    read_binary, read_text, run_trace, synth_trace, SynthParams, TraceMetrics, TraceParams,
    TraceRecord, METRICS_HEADER,
};

#[derive(Debug, Parser)]
#[command(name = "seacache", version, about = "Skewed elastic-associativity cache laboratory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct CommonArgs {
    /// TOML configuration file (a previous run's manifest.toml also works).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run directory [default: runs/<subcommand>].
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Prime+Probe rounds per eviction set.
    #[arg(long)]
    pub rounds: Option<u64>,
    /// Divide the cache capacity by this factor.
    #[arg(long)]
    pub scale: Option<u64>,
    /// Extra `key=value` overrides, applied last.
    #[arg(value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Attack success-rate grid over VH/AH, re-keying period and K.
    Security(CommonArgs),
    /// Replay a trace file, or synthetic traces, through the cache.
    Trace(CommonArgs),
    /// Tag storage comparison.
    Overhead(CommonArgs),
    /// Access latency for each logical associativity.
    LatencyTable {
        #[command(flatten)]
        common: CommonArgs,
        /// Largest H listed.
        #[arg(long, default_value_t = 24)]
        h_max: u32,
    },
    /// Built-in oracle and invariant checks.
    Selftest(CommonArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Security(_) => "security",
            Command::Trace(_) => "trace",
            Command::Overhead(_) => "overhead",
            Command::LatencyTable { .. } => "latency-table",
            Command::Selftest(_) => "selftest",
        }
    }

    fn common(&self) -> &CommonArgs {
        match self {
            Command::Security(c) | Command::Trace(c) | Command::Overhead(c) | Command::Selftest(c) => c,
            Command::LatencyTable { common, .. } => common,
        }
    }
}

/// Defaults, then file, then `SEACACHE_*` variables, then flags and overrides.
pub fn load_config<I>(common: &CommonArgs, env: I) -> Result<RawConfig>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut raw = RawConfig::default();
    if let Some(path) = &common.config {
        raw.merge_file(path)?;
    }
    raw.merge_env(env)?;
    let flags = [
        ("master_seed", common.seed.map(|v| v.to_string())),
        ("workers", common.workers.map(|v| v.to_string())),
        ("eval_rounds", common.rounds.map(|v| v.to_string())),
        ("scale", common.scale.map(|v| v.to_string())),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            raw.set(key, &v, crate::config::Source::Cli)?;
        }
    }
    for assignment in &common.set {
        raw.merge_assignment(assignment)?;
    }
    Ok(raw)
}

struct RunDir {
    path: PathBuf,
}

impl RunDir {
    fn create(path: PathBuf) -> Result<Self> {
        fs::create_dir_all(&path)?;
        Ok(RunDir { path })
    }

    fn file(&self, name: &str) -> Result<BufWriter<File>> {
        Ok(BufWriter::new(File::create(self.path.join(name))?))
    }

    fn write(&self, name: &str, text: &str) -> Result<()> {
        fs::write(self.path.join(name), text)?;
        Ok(())
    }
}

fn write_manifest(dir: &RunDir, command: &str, raw: &RawConfig, cfg: &RunConfig) -> Result<()> {
    dir.write("config.toml", &raw.to_toml())?;
    let mut meta = toml::Table::new();
    meta.insert("command".into(), command.into());
    meta.insert("version".into(), env!("CARGO_PKG_VERSION").into());
    meta.insert("master_seed".into(), (cfg.sweep.master_seed as i64).into());
    meta.insert(
        "rerun".into(),
        format!("seacache {command} --config manifest.toml").into(),
    );
    let mut doc = toml::Table::new();
    doc.insert(MANIFEST_SECTION.into(), toml::Value::Table(meta));
    doc.extend(raw.to_toml_table());
    let text = toml::to_string(&doc).map_err(|e| Error::config("manifest", e.to_string()))?;
    dir.write("manifest.toml", &text)
}

/// Parses `args` and runs the chosen subcommand; returns the exit code.
pub fn run<I, T>(args: I) -> Result<i32>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            e.print()?;
            return Ok(code);
        }
    };
    run_command(&cli.command, std::env::vars())
}

pub fn run_command<E>(command: &Command, env: E) -> Result<i32>
where
    E: IntoIterator<Item = (String, String)>,
{
    let common = command.common();
    let raw = load_config(common, env)?;
    for (key, value) in raw.defaulted() {
        log::info!("default {key} = {value}");
    }
    let cfg = raw.resolve()?;
    let dir = RunDir::create(
        common
            .out_dir
            .clone()
            .unwrap_or_else(|| Path::new("runs").join(command.name())),
    )?;
    write_manifest(&dir, command.name(), &raw, &cfg)?;
    log::info!("writing results to {}", dir.path.display());

    match command {
        Command::Security(_) => security(&cfg, &dir),
        Command::Trace(_) => trace(&cfg, &dir),
        Command::Overhead(_) => overhead(&cfg, &dir),
        Command::LatencyTable { h_max, .. } => latency(&cfg, &dir, *h_max),
        Command::Selftest(_) => selftest(&dir),
    }
}

fn security(cfg: &RunConfig, dir: &RunDir) -> Result<i32> {
    let s = &cfg.sweep;
    let mut cells = security_grid(
        &s.configs,
        &s.rkps,
        &s.k_values,
        s.seeds,
        s.master_seed,
        cfg.attack.eval_rounds,
    );
    for c in &mut cells {
        c.aggressive_after = cfg.attack.aggressive_after;
        c.metric = cfg.attack.metric;
    }
    log::info!(
        "{} cells on {} lines with {} workers",
        cells.len(),
        cfg.geometry.num_lines(),
        cfg.workers()
    );
    let records = run_grid(&cfg.geometry, &cells, cfg.workers())?;
    write_records_csv(&records, dir.file("records.csv")?)?;
    let summary = aggregate(&records);
    write_summary_csv(&summary, dir.file("summary.csv")?)?;
    let best = optimal_k_table(&summary);
    write_summary_csv(&best, dir.file("table.csv")?)?;
    write_plot_data(&best, dir.file("table.dat")?)?;
    print!("{}", render_table(&best));

    let failed = records.iter().filter(|r| !r.is_ok()).count();
    if failed > 0 {
        log::error!("{failed} of {} cells failed; see the error column", records.len());
        return Ok(1);
    }
    Ok(0)
}

/// Success rates in percent with the optimal K, one row per period.
fn render_table(best: &[ConfigSummary]) -> String {
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
    let mut out = format!("{:>6}", "RKP");
    for (vh, ah) in &configs {
        out += &format!(" {:>14}", format!("{vh}/{ah}"));
    }
    out.push('\n');
    for rkp in rkps {
        out += &format!("{:>5}N", rkp);
        for &(vh, ah) in &configs {
            let cell = best
                .iter()
                .find(|b| b.vh == vh && b.ah == ah && b.rkp_multiple == rkp)
                .map_or("-".to_string(), |b| format!("{:.3}% K{}", 100.0 * b.success_rate, b.k));
            out += &format!(" {cell:>14}");
        }
        out.push('\n');
    }
    out
}

fn load_trace(path: &str) -> Result<Vec<TraceRecord>> {
    let file = BufReader::new(File::open(path)?);
    if path.ends_with(".bin") {
        read_binary(file).collect()
    } else {
        read_text(file).collect()
    }
}

fn trace(cfg: &RunConfig, dir: &RunDir) -> Result<i32> {
    let t = &cfg.trace;
    let from_file = t.file.as_deref().map(load_trace).transpose()?;
    let synth = SynthParams {
        kind: t.kind,
        length: t.length,
        base_line: 0,
        instruction_delta: t.instructions_per_access,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers())
        .build()
        .map_err(|e| Error::config("workers", e.to_string()))?;
    let results: Vec<(u64, Result<TraceMetrics>)> = pool.install(|| {
        (0..t.seeds as u64)
            .into_par_iter()
            .map(|i| {
                let seed = cell_seed(cfg.sweep.master_seed, i);
                let params = TraceParams {
                    vh: cfg.vh,
                    ah: cfg.ah,
                    rekey_every: t.rekey_every,
                    seed: mix_seed(seed),
                };
                let metrics = match &from_file {
                    Some(records) => run_trace(records.iter().copied().map(Ok), &cfg.geometry, &params),
                    None => synth_trace(&synth, seed)
                        .and_then(|records| run_trace(records.into_iter().map(Ok), &cfg.geometry, &params)),
                };
                (seed, metrics)
            })
            .collect()
    });

    let mut w = csv::Writer::from_writer(dir.file("trace_metrics.csv")?);
    let mut header = vec!["seed"];
    header.extend(METRICS_HEADER);
    w.write_record(&header)?;
    let mut summary = String::new();
    for (seed, metrics) in results {
        let metrics = metrics?;
        for row in metrics.rows() {
            let mut full = vec![seed.to_string()];
            full.extend(row);
            w.write_record(&full)?;
        }
        summary += &format!("seed {seed} (VH={}, AH={})\n{}\n", cfg.vh, cfg.ah, metrics.summary());
    }
    w.flush()?;
    dir.write("summary.txt", &summary)?;
    print!("{summary}");
    Ok(0)
}

fn overhead(cfg: &RunConfig, dir: &RunDir) -> Result<i32> {
    let rows = overhead_rows(&cfg.geometry);
    let mut w = csv::Writer::from_writer(dir.file("overhead.csv")?);
    w.write_record([
        "design", "tag_bits", "entry_bits", "tag_storage_bits", "tag_kib", "data_kib",
        "total_kib", "overhead_vs_conventional",
    ])?;
    let mut text = format!(
        "{:<13} {:>8} {:>10} {:>16} {:>10} {:>10} {:>10} {:>9}\n",
        "design", "tag_bits", "entry_bits", "tag_bits_total", "tag_KiB", "data_KiB", "total_KiB", "overhead"
    );
    for r in &rows {
        w.write_record([
            r.design.to_string(),
            r.layout.tag_bits.to_string(),
            r.layout.entry_bits.to_string(),
            r.layout.tag_storage_bits.to_string(),
            r.layout.tag_storage_kib.to_string(),
            r.totals.data_kib.to_string(),
            r.totals.total_kib.to_string(),
            r.totals.overhead_vs_conventional.to_string(),
        ])?;
        text += &format!(
            "{:<13} {:>8} {:>10} {:>16} {:>10} {:>10} {:>10} {:>8.2}%\n",
            r.design,
            r.layout.tag_bits,
            r.layout.entry_bits,
            r.layout.tag_storage_bits,
            r.layout.tag_storage_kib,
            r.totals.data_kib,
            r.totals.total_kib,
            100.0 * r.totals.overhead_vs_conventional
        );
    }
    w.flush()?;
    dir.write("overhead.txt", &text)?;
    print!("{text}");
    Ok(0)
}

fn latency(cfg: &RunConfig, dir: &RunDir, h_max: u32) -> Result<i32> {
    if h_max == 0 {
        return Err(Error::config("h_max", "must be at least 1"));
    }
    let banks = cfg.geometry.num_banks() as u32;
    let rows = latency_table(banks, h_max);
    let mut w = csv::Writer::from_writer(dir.file("latency.csv")?);
    w.write_record(["h", "cycles"])?;
    let mut text = format!("{:>3} {:>7}\n", "H", "cycles");
    for (h, c) in rows {
        w.write_record([h.to_string(), c.to_string()])?;
        text += &format!("{h:>3} {c:>7}\n");
    }
    w.flush()?;
    print!("{text}");
    Ok(0)
}

fn selftest(dir: &RunDir) -> Result<i32> {
    let checks = crate::selftest::run_all();
    let mut out = dir.file("selftest.txt")?;
    let mut failed = 0;
    for c in &checks {
        println!("{c}");
        writeln!(out, "{c}")?;
        failed += usize::from(!c.passed);
    }
    out.flush()?;
    Ok(i32::from(failed > 0))
}
