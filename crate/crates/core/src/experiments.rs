//! Experiment harness: the flat `key=value` spec format, the five experiment
//! runners and their CSV output.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::addressing::{AddressMap, AddressMapConfig};
use crate::hostgen::{AddressMode, Prng, PortConfig, RequestMix, TraceError, TraceRecord, DEFAULT_ISSUE_PERIOD};
use crate::interconnect::InterconnectConfig;
use crate::memdev::{PrechargePolicy, VaultConfig};
use crate::protocol::REQUEST_SIZES;
use crate::simkernel::SimTime;
use crate::stats::{linear_fit, Histogram, LinearFit};
use crate::system::{ConfigError, RunResult, System, SystemConfig};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("spec line {line}: {msg}")]
    Spec { line: usize, msg: String },
    #[error("invalid experiment: {0}")]
    Invalid(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn invalid(msg: impl Into<String>) -> ExperimentError {
    ExperimentError::Invalid(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Gups,
    Lowload,
    Qos,
    Combos,
    PortSweep,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Gups => "gups",
            ExperimentKind::Lowload => "lowload",
            ExperimentKind::Qos => "qos",
            ExperimentKind::Combos => "combos",
            ExperimentKind::PortSweep => "portsweep",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "gups" => ExperimentKind::Gups,
            "lowload" => ExperimentKind::Lowload,
            "qos" => ExperimentKind::Qos,
            "combos" => ExperimentKind::Combos,
            "portsweep" => ExperimentKind::PortSweep,
            _ => return None,
        })
    }
}

/// Where the random addresses of a GUPS port may land.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Pattern {
    /// The lowest `n` banks of vault 0.
    Banks(u8),
    /// All banks of the lowest `n` vaults.
    Vaults(u8),
}

impl Pattern {
    pub fn parse(s: &str) -> Option<Pattern> {
        let digits = s.chars().take_while(|c| c.is_ascii_digit()).count();
        let n: u8 = s[..digits].parse().ok()?;
        if !(n.is_power_of_two() && n <= 16) {
            return None;
        }
        match &s[digits..] {
            "bank" | "banks" => Some(Pattern::Banks(n)),
            "vault" | "vaults" => Some(Pattern::Vaults(n)),
            _ => None,
        }
    }

    /// (mask, antimask) for the address generator.
    pub fn masks(self, map: &AddressMap) -> Result<(u64, u64), ExperimentError> {
        let cfg = map.config();
        let (field, shift, count, n) = match self {
            Pattern::Banks(n) => (map.bank_field_mask(), map.bank_shift(), cfg.banks_per_vault, n),
            Pattern::Vaults(n) => (map.vault_field_mask(), map.vault_shift(), cfg.vaults, n),
        };
        if u32::from(n) > count {
            return Err(invalid(format!("pattern {self} exceeds the {count} available")));
        }
        // Keep the low log2(n) bits of the field free, force the rest to zero.
        let free = (u64::from(n) - 1) << shift;
        let mut mask = field & !free;
        if let Pattern::Banks(_) = self {
            mask |= map.vault_field_mask();
        }
        Ok((mask, 0))
    }

    pub fn name(self) -> String {
        self.to_string()
    }
}

impl std::fmt::Display for Pattern {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match *self {
            Pattern::Banks(1) => write!(f, "1bank"),
            Pattern::Banks(n) => write!(f, "{n}banks"),
            Pattern::Vaults(1) => write!(f, "1vault"),
            Pattern::Vaults(n) => write!(f, "{n}vaults"),
        }
    }
}

/// Masks that pin every address to one vault.
pub fn vault_masks(map: &AddressMap, vault: u8) -> (u64, u64) {
    let field = map.vault_field_mask();
    let on = (u64::from(vault) << map.vault_shift()) & field;
    (field & !on, on)
}

/// Parses `250ns`, `200us`, `2ms`, `1s` or `1067ps`. A bare number is ns.
pub fn parse_time(s: &str) -> Option<SimTime> {
    let s = s.trim();
    let split = s.find(|c: char| !(c.is_ascii_digit() || c == '.')).unwrap_or(s.len());
    let (num, unit) = s.split_at(split);
    let scale: f64 = match unit {
        "ps" => 1.0,
        "" | "ns" => 1e3,
        "us" => 1e6,
        "ms" => 1e9,
        "s" => 1e12,
        _ => return None,
    };
    let v: f64 = num.parse().ok()?;
    (v.is_finite() && v >= 0.0).then(|| SimTime((v * scale).round() as u64))
}

/// Canonical text for a time: the largest unit that divides it exactly.
pub fn format_time(t: SimTime) -> String {
    let ps = t.0;
    for (unit, scale) in [("ms", 1_000_000_000), ("us", 1_000_000), ("ns", 1_000)] {
        if ps != 0 && ps.is_multiple_of(scale) {
            return format!("{}{unit}", ps / scale);
        }
    }
    format!("{ps}ps")
}

/// Everything needed to reproduce one experiment. See the README for keys.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub duration: SimTime,
    pub warmup: SimTime,
    pub sizes: Vec<u32>,
    pub patterns: Vec<Pattern>,
    /// GUPS ports; upper end of the port sweep.
    pub ports: u32,
    pub tag_pool: u32,
    pub issue_period: SimTime,
    pub read_fraction: f64,
    pub lowload_max: u32,
    pub lowload_vault: u8,
    pub lowload_size: u32,
    pub lowload_tag_pool: u32,
    pub lowload_issue_period: SimTime,
    /// Optional `R|W <addr> <size>` stream replayed by the low-load run.
    pub trace: Option<PathBuf>,
    pub qos_vault: u8,
    /// Run this many random vault subsets instead of all 1820.
    pub sample: Option<usize>,
    pub map: AddressMapConfig,
    pub vault: VaultConfig,
    pub net: InterconnectConfig,
    pub out: Option<PathBuf>,
    pub event_log: Option<PathBuf>,
}

impl ExperimentSpec {
    pub fn new(kind: ExperimentKind) -> Self {
        let mut s = ExperimentSpec {
            kind,
            seed: 1,
            duration: SimTime::from_us(2_000),
            warmup: SimTime::from_us(20),
            sizes: REQUEST_SIZES.to_vec(),
            patterns: vec![
                Pattern::Banks(1),
                Pattern::Banks(2),
                Pattern::Banks(4),
                Pattern::Banks(8),
                Pattern::Banks(16),
                Pattern::Vaults(2),
                Pattern::Vaults(4),
                Pattern::Vaults(8),
                Pattern::Vaults(16),
            ],
            ports: 9,
            tag_pool: crate::hostgen::DEFAULT_TAG_POOL,
            issue_period: DEFAULT_ISSUE_PERIOD,
            read_fraction: 1.0,
            lowload_max: 350,
            lowload_vault: 0,
            lowload_size: 128,
            lowload_tag_pool: 96,
            lowload_issue_period: SimTime::from_ps(1_067),
            trace: None,
            qos_vault: 1,
            sample: None,
            map: AddressMapConfig::default(),
            vault: VaultConfig::default(),
            net: InterconnectConfig::default(),
            out: None,
            event_log: None,
        };
        if kind == ExperimentKind::PortSweep {
            s.patterns = vec![Pattern::Banks(2), Pattern::Banks(4), Pattern::Banks(8), Pattern::Vaults(16)];
        }
        s
    }

    /// Parses the flat `key=value` format. Unset keys keep their defaults;
    /// `kind` must be present.
    pub fn parse(text: &str) -> Result<Self, ExperimentError> {
        let mut pairs: Vec<(usize, String, String)> = Vec::new();
        let mut kind = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| ExperimentError::Spec { line: i + 1, msg };
            let (k, v) = line.split_once('=').ok_or_else(|| err(format!("expected key=value, got {line:?}")))?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if k == "kind" {
                kind = Some(ExperimentKind::parse(&v).ok_or_else(|| err(format!("unknown kind {v:?}")))?);
            } else {
                pairs.push((i + 1, k, v));
            }
        }
        let kind = kind.ok_or(ExperimentError::Spec { line: 0, msg: "missing kind".into() })?;
        let mut spec = ExperimentSpec::new(kind);
        for (line, k, v) in pairs {
            spec.set(&k, &v).map_err(|msg| ExperimentError::Spec { line, msg })?;
        }
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(|source| ExperimentError::Io { path: path.into(), source })?;
        Self::parse(&text)
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(v: &str) -> Result<T, String> {
            v.parse().map_err(|_| format!("bad number {v:?}"))
        }
        fn time(v: &str) -> Result<SimTime, String> {
            parse_time(v).ok_or_else(|| format!("bad time {v:?}"))
        }
        let v = value;
        match key {
            "seed" => self.seed = num(v)?,
            "duration" => self.duration = time(v)?,
            "warmup" => self.warmup = time(v)?,
            "sizes" => self.sizes = v.split(',').map(|x| num(x.trim())).collect::<Result<_, _>>()?,
            "patterns" => {
                self.patterns = v
                    .split(',')
                    .map(|x| Pattern::parse(x.trim()).ok_or_else(|| format!("bad pattern {x:?}")))
                    .collect::<Result<_, _>>()?
            }
            "ports" => self.ports = num(v)?,
            "tag_pool" => self.tag_pool = num(v)?,
            "issue_period" => self.issue_period = time(v)?,
            "read_fraction" => self.read_fraction = num(v)?,
            "lowload_max" => self.lowload_max = num(v)?,
            "lowload_vault" => self.lowload_vault = num(v)?,
            "lowload_size" => self.lowload_size = num(v)?,
            "lowload_tag_pool" => self.lowload_tag_pool = num(v)?,
            "lowload_issue_period" => self.lowload_issue_period = time(v)?,
            "trace" => self.trace = (!v.is_empty()).then(|| PathBuf::from(v)),
            "qos_vault" => self.qos_vault = num(v)?,
            "sample" => self.sample = if v.is_empty() || v == "all" { None } else { Some(num(v)?) },
            "block_size" => self.map.block_size = num(v)?,
            "links" => self.net.link.links = num(v)?,
            "lanes" => self.net.link.lanes_per_link = num(v)?,
            "lane_rate_mbps" => self.net.link.lane_rate_mbps = num(v)?,
            "host_pipeline" => self.net.host_pipeline = time(v)?,
            "link_layer" => self.net.link_layer = time(v)?,
            "hop_latency" => self.net.hop_latency = time(v)?,
            "noc_flit_time" => self.net.noc_flit_time = time(v)?,
            "controller_queue" => self.vault.controller_queue_depth = num(v)?,
            "bank_queue" => self.vault.bank_queue_depth = num(v)?,
            "passthrough" => self.vault.passthrough = time(v)?,
            "bus_beat" => self.vault.bus_beat = time(v)?,
            "t_rcd" => self.vault.timing.t_rcd = time(v)?,
            "t_cl" => self.vault.timing.t_cl = time(v)?,
            "t_rp" => self.vault.timing.t_rp = time(v)?,
            "precharge" => {
                self.vault.precharge = match v {
                    "overlapped" => PrechargePolicy::Overlapped,
                    "after_data" => PrechargePolicy::AfterData,
                    _ => return Err(format!("bad precharge policy {v:?}")),
                }
            }
            "out" => self.out = (!v.is_empty()).then(|| PathBuf::from(v)),
            "event_log" => self.event_log = (!v.is_empty()).then(|| PathBuf::from(v)),
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Every key with its current value; `parse(to_text())` gives back `self`.
    pub fn to_text(&self) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let join = |xs: Vec<String>| xs.join(",");
        let t = self.vault.timing;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("kind", self.kind.name().into());
        kv("seed", self.seed.to_string());
        kv("duration", format_time(self.duration));
        kv("warmup", format_time(self.warmup));
        kv("sizes", join(self.sizes.iter().map(u32::to_string).collect()));
        kv("patterns", join(self.patterns.iter().map(|p| p.name()).collect()));
        kv("ports", self.ports.to_string());
        kv("tag_pool", self.tag_pool.to_string());
        kv("issue_period", format_time(self.issue_period));
        kv("read_fraction", self.read_fraction.to_string());
        kv("lowload_max", self.lowload_max.to_string());
        kv("lowload_vault", self.lowload_vault.to_string());
        kv("lowload_size", self.lowload_size.to_string());
        kv("lowload_tag_pool", self.lowload_tag_pool.to_string());
        kv("lowload_issue_period", format_time(self.lowload_issue_period));
        kv("trace", path(&self.trace));
        kv("qos_vault", self.qos_vault.to_string());
        kv("sample", self.sample.map(|k| k.to_string()).unwrap_or_else(|| "all".into()));
        kv("block_size", self.map.block_size.to_string());
        kv("links", self.net.link.links.to_string());
        kv("lanes", self.net.link.lanes_per_link.to_string());
        kv("lane_rate_mbps", self.net.link.lane_rate_mbps.to_string());
        kv("host_pipeline", format_time(self.net.host_pipeline));
        kv("link_layer", format_time(self.net.link_layer));
        kv("hop_latency", format_time(self.net.hop_latency));
        kv("noc_flit_time", format_time(self.net.noc_flit_time));
        kv("controller_queue", self.vault.controller_queue_depth.to_string());
        kv("bank_queue", self.vault.bank_queue_depth.to_string());
        kv("passthrough", format_time(self.vault.passthrough));
        kv("bus_beat", format_time(self.vault.bus_beat));
        kv("t_rcd", format_time(t.t_rcd));
        kv("t_cl", format_time(t.t_cl));
        kv("t_rp", format_time(t.t_rp));
        kv(
            "precharge",
            match self.vault.precharge {
                PrechargePolicy::Overlapped => "overlapped".into(),
                PrechargePolicy::AfterData => "after_data".into(),
            },
        );
        kv("out", path(&self.out));
        kv("event_log", path(&self.event_log));
        s
    }

    fn validate(&self) -> Result<(), ExperimentError> {
        if self.sizes.is_empty() || self.sizes.iter().any(|s| !REQUEST_SIZES.contains(s)) {
            return Err(invalid(format!("sizes must be drawn from {REQUEST_SIZES:?}")));
        }
        if self.ports == 0 || self.ports as usize > crate::hostgen::MAX_PORTS {
            return Err(invalid("ports must be in 1..=9"));
        }
        if !(0.0..=1.0).contains(&self.read_fraction) {
            return Err(invalid("read_fraction must be in [0, 1]"));
        }
        if self.warmup >= self.duration {
            return Err(invalid("warmup must end before the duration"));
        }
        if self.lowload_vault >= 16 || self.qos_vault >= 16 {
            return Err(invalid("vault index out of range"));
        }
        Ok(())
    }
}

/// Reductions of one simulation (or one port of it) kept for reporting.
#[derive(Debug, Clone, PartialEq)]
pub struct PointStats {
    pub reads: u64,
    pub writes: u64,
    pub mean_latency_ns: Option<f64>,
    pub min_latency_ns: Option<f64>,
    pub max_latency_ns: Option<f64>,
    pub stddev_latency_ns: Option<f64>,
    pub req_gbps: f64,
    pub resp_gbps: f64,
    pub vault_bus_gbps: f64,
    /// Vault-controller outstanding requests by Little's law.
    pub outstanding: f64,
    /// Worst |L - λW| / λW over queues with at least `LITTLE_MIN_SAMPLES`.
    pub little_max_error: f64,
}

pub const LITTLE_MIN_SAMPLES: u64 = 10_000;

impl PointStats {
    pub fn of(r: &RunResult) -> PointStats {
        let (req_gbps, resp_gbps) = r.bandwidth().gbps();
        let little_max_error =
            r.little_checks(LITTLE_MIN_SAMPLES).iter().map(|(_, c)| c.relative_error()).fold(0.0, f64::max);
        PointStats {
            reads: r.total_reads(),
            writes: r.ports.iter().map(|p| p.monitor.writes).sum(),
            mean_latency_ns: r.mean_read_latency_ns(),
            min_latency_ns: r.min_read_latency_ns(),
            max_latency_ns: r.max_read_latency_ns(),
            stddev_latency_ns: r.read_latency_stddev_ns(),
            req_gbps,
            resp_gbps,
            vault_bus_gbps: r.max_vault_bus_gbps(),
            outstanding: outstanding_estimate(r),
            little_max_error,
        }
    }

    /// Latency figures of one port only; bandwidth columns stay run-wide.
    pub fn of_port(r: &RunResult, port: usize) -> PointStats {
        let mut s = PointStats::of(r);
        let m = &r.ports[port].monitor;
        s.reads = m.reads;
        s.writes = m.writes;
        s.mean_latency_ns = m.mean_read_latency_ns();
        s.min_latency_ns = m.min_latency_ns();
        s.max_latency_ns = m.max_latency_ns();
        s.stddev_latency_ns = None;
        s
    }
}

/// Arrival rate times mean bank-queue sojourn, summed over vaults.
pub fn outstanding_estimate(r: &RunResult) -> f64 {
    r.vaults.iter().map(|v| v.bank_queues.lambda_w()).sum()
}

/// One result line.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub experiment: &'static str,
    pub pattern: String,
    pub size: u32,
    pub ports: u32,
    pub position: Option<u8>,
    pub port: Option<u8>,
    pub n: Option<u32>,
    pub stats: PointStats,
}

/// Output of one experiment: the main rows plus named auxiliary tables.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub points: Vec<Point>,
    pub aux: Vec<(&'static str, Table)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(columns: &[&'static str]) -> Self {
        Table { columns: columns.to_vec(), rows: Vec::new() }
    }
}

pub const POINT_COLUMNS: [&str; 18] = [
    "experiment",
    "pattern",
    "size",
    "ports",
    "position",
    "port",
    "n",
    "reads",
    "writes",
    "mean_latency_ns",
    "min_latency_ns",
    "max_latency_ns",
    "stddev_latency_ns",
    "req_gbps",
    "resp_gbps",
    "total_gbps",
    "vault_bus_gbps",
    "outstanding",
];

fn f3(x: f64) -> String {
    format!("{x:.3}")
}

fn opt<T: ToString>(x: Option<T>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn optf(x: Option<f64>) -> String {
    x.map(f3).unwrap_or_default()
}

pub fn points_table(points: &[Point]) -> Table {
    let mut t = Table::new(&POINT_COLUMNS);
    for p in points {
        let s = &p.stats;
        t.rows.push(vec![
            p.experiment.to_string(),
            p.pattern.clone(),
            p.size.to_string(),
            p.ports.to_string(),
            opt(p.position),
            opt(p.port),
            opt(p.n),
            s.reads.to_string(),
            s.writes.to_string(),
            optf(s.mean_latency_ns),
            optf(s.min_latency_ns),
            optf(s.max_latency_ns),
            optf(s.stddev_latency_ns),
            f3(s.req_gbps),
            f3(s.resp_gbps),
            f3(s.req_gbps + s.resp_gbps),
            f3(s.vault_bus_gbps),
            f3(s.outstanding),
        ]);
    }
    t
}

pub fn write_table(t: &Table, out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(out, "{}", t.columns.join(","))?;
    for r in &t.rows {
        writeln!(out, "{}", r.join(","))?;
    }
    Ok(())
}

/// `runs.csv` + `runs_<aux>.csv` next to it.
pub fn aux_path(main: &Path, name: &str) -> PathBuf {
    let stem = main.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into());
    let ext = main.extension().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "csv".into());
    main.with_file_name(format!("{stem}_{name}.{ext}"))
}

/// Writes the main table to `path` and every auxiliary table beside it.
/// Returns the files written, main first.
pub fn emit_csv(report: &Report, path: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
    let mut written = Vec::new();
    let mut tables = vec![(path.to_path_buf(), points_table(&report.points))];
    for (name, t) in &report.aux {
        tables.push((aux_path(path, name), t.clone()));
    }
    for (p, t) in tables {
        let io = |source| ExperimentError::Io { path: p.clone(), source };
        let f = File::create(&p).map_err(io)?;
        let mut w = BufWriter::new(f);
        write_table(&t, &mut w).map_err(io)?;
        w.flush().map_err(io)?;
        written.push(p);
    }
    Ok(written)
}

/// Shared plumbing: builds systems from the spec and runs them.
struct Runner<'a> {
    spec: &'a ExperimentSpec,
    map: AddressMap,
    log: Option<BufWriter<File>>,
    counter: u64,
}

impl<'a> Runner<'a> {
    fn new(spec: &'a ExperimentSpec) -> Result<Self, ExperimentError> {
        spec.validate()?;
        let map = AddressMap::new(spec.map).map_err(ConfigError::from)?;
        let log = match &spec.event_log {
            Some(p) => Some(BufWriter::new(
                File::create(p).map_err(|source| ExperimentError::Io { path: p.clone(), source })?,
            )),
            None => None,
        };
        Ok(Runner { spec, map, log, counter: 0 })
    }

    /// Per-port seed derived from the spec seed and a running point counter.
    fn seed(&self, port: usize) -> u64 {
        let mut p = Prng::new(self.spec.seed ^ (self.counter << 8) ^ port as u64);
        p.next_u64()
    }

    fn port(&self, id: usize, size: u32, (mask, antimask): (u64, u64)) -> PortConfig {
        let mix = if self.spec.read_fraction >= 1.0 {
            RequestMix::ReadOnly
        } else if self.spec.read_fraction <= 0.0 {
            RequestMix::WriteOnly
        } else {
            RequestMix::Mixed { read_fraction: self.spec.read_fraction }
        };
        PortConfig {
            id: id as u8,
            mode: AddressMode::Random,
            mix,
            req_size: size,
            mask,
            antimask,
            tag_pool: self.spec.tag_pool,
            issue_period: self.spec.issue_period,
            budget: None,
            record_writes: true,
            seed: self.seed(id),
        }
    }

    fn system(&self, ports: Vec<PortConfig>) -> SystemConfig {
        SystemConfig {
            map: self.spec.map,
            vault: self.spec.vault,
            net: self.spec.net,
            ports,
            traces: Vec::new(),
            duration: self.spec.duration,
            warmup: self.spec.warmup,
            probe_window: SimTime::from_us(1),
        }
    }

    fn run(&mut self, label: &str, cfg: SystemConfig) -> Result<RunResult, ExperimentError> {
        self.counter += 1;
        let mut sys = System::new(cfg)?;
        if let Some(log) = self.log.as_mut() {
            let io = |source| ExperimentError::Io { path: PathBuf::from("event log"), source };
            writeln!(log, "# {label}").map_err(io)?;
            log.flush().map_err(io)?;
            let f = log.get_ref().try_clone().map_err(io)?;
            sys = sys.with_trace(Box::new(BufWriter::new(f)));
        }
        Ok(sys.run().map_err(ConfigError::from)?)
    }
}

/// Every (pattern, size) with `spec.ports` GUPS ports.
pub fn run_gups_sweep(spec: &ExperimentSpec) -> Result<Report, ExperimentError> {
    let mut r = Runner::new(spec)?;
    let mut points = Vec::new();
    for &pattern in &spec.patterns {
        let masks = pattern.masks(&r.map)?;
        for &size in &spec.sizes {
            let ports = (0..spec.ports as usize).map(|i| r.port(i, size, masks)).collect();
            let cfg = r.system(ports);
            let res = r.run(&format!("gups {pattern} {size}"), cfg)?;
            points.push(Point {
                experiment: "gups",
                pattern: pattern.name(),
                size,
                ports: spec.ports,
                position: None,
                port: None,
                n: None,
                stats: PointStats::of(&res),
            });
        }
    }
    Ok(Report { points, aux: Vec::new() })
}

/// Fit of the low-load curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LowloadFit {
    /// Last n of the linear region.
    pub knee: u32,
    pub linear: LinearFit,
    pub plateau: LinearFit,
    pub plateau_level_ns: f64,
}

pub const PLATEAU_FROM: u32 = 200;

/// Linear region is n in [1, min(100, knee)], plateau n >= 200.
pub fn fit_lowload(curve: &[(u32, f64)], knee: u32) -> Option<LowloadFit> {
    let end = knee.min(100);
    let (lx, ly): (Vec<f64>, Vec<f64>) =
        curve.iter().filter(|(n, _)| *n <= end).map(|&(n, y)| (f64::from(n), y)).unzip();
    let (px, py): (Vec<f64>, Vec<f64>) =
        curve.iter().filter(|(n, _)| *n >= PLATEAU_FROM).map(|&(n, y)| (f64::from(n), y)).unzip();
    let linear = linear_fit(&lx, &ly)?;
    let plateau = linear_fit(&px, &py)?;
    let plateau_level_ns = py.iter().sum::<f64>() / py.len() as f64;
    Some(LowloadFit { knee: end, linear, plateau, plateau_level_ns })
}

fn lowload_stream(spec: &ExperimentSpec, map: &AddressMap) -> Result<Option<Vec<TraceRecord>>, ExperimentError> {
    let Some(p) = &spec.trace else { return Ok(None) };
    let t = crate::hostgen::load_trace(p)?;
    if t.iter().any(|r| map.decode(r.address).vault != spec.lowload_vault) {
        return Err(invalid("low-load trace must stay inside lowload_vault"));
    }
    Ok(Some(t))
}

/// For each n in 1..=lowload_max: a burst of n requests from one port into
/// one vault (random banks), mean latency over the burst.
pub fn run_lowload_stream(spec: &ExperimentSpec) -> Result<(Report, Option<LowloadFit>), ExperimentError> {
    let mut r = Runner::new(spec)?;
    let masks = vault_masks(&r.map, spec.lowload_vault);
    let trace = lowload_stream(spec, &r.map)?;
    let mut points = Vec::new();
    let mut curve = Vec::new();
    for n in 1..=spec.lowload_max {
        let mut port = r.port(0, spec.lowload_size, masks);
        port.tag_pool = spec.lowload_tag_pool;
        port.issue_period = spec.lowload_issue_period;
        port.budget = Some(u64::from(n));
        port.mix = RequestMix::ReadOnly;
        // The same stream prefix for every n.
        port.seed = spec.seed;
        let mut cfg = r.system(vec![port]);
        if let Some(t) = &trace {
            if (t.len() as u32) < n {
                break;
            }
            cfg.ports[0].mode = AddressMode::Trace;
            cfg.traces = vec![Some(t[..n as usize].to_vec())];
        }
        cfg.warmup = SimTime::ZERO;
        let res = r.run(&format!("lowload {n}"), cfg)?;
        let stats = PointStats::of(&res);
        if let Some(m) = stats.mean_latency_ns {
            curve.push((n, m));
        }
        points.push(Point {
            experiment: "lowload",
            pattern: "1vault".into(),
            size: spec.lowload_size,
            ports: 1,
            position: Some(spec.lowload_vault),
            port: None,
            n: Some(n),
            stats,
        });
    }
    let fit = fit_lowload(&curve, spec.lowload_tag_pool);
    let mut t = Table::new(&["region", "n_from", "n_to", "slope_ns_per_request", "intercept_ns", "r2", "level_ns"]);
    if let Some(f) = fit {
        let last = curve.last().map(|c| c.0).unwrap_or(0);
        t.rows.push(vec![
            "linear".into(),
            "1".into(),
            f.knee.to_string(),
            f3(f.linear.slope),
            f3(f.linear.intercept),
            format!("{:.5}", f.linear.r2),
            String::new(),
        ]);
        t.rows.push(vec![
            "plateau".into(),
            PLATEAU_FROM.to_string(),
            last.to_string(),
            f3(f.plateau.slope),
            f3(f.plateau.intercept),
            format!("{:.5}", f.plateau.r2),
            f3(f.plateau_level_ns),
        ]);
    }
    Ok((Report { points, aux: vec![("fit", t)] }, fit))
}

/// Three ports pinned to `qos_vault`, a fourth visiting every vault.
pub fn run_qos_fourport(spec: &ExperimentSpec) -> Result<Report, ExperimentError> {
    let mut r = Runner::new(spec)?;
    let pinned = vault_masks(&r.map, spec.qos_vault);
    let mut points = Vec::new();
    for &size in &spec.sizes {
        for position in 0..16u8 {
            let mut ports: Vec<PortConfig> = (0..3).map(|i| r.port(i, size, pinned)).collect();
            ports.push(r.port(3, size, vault_masks(&r.map, position)));
            let cfg = r.system(ports);
            let res = r.run(&format!("qos {size} {position}"), cfg)?;
            for port in 0..4u8 {
                points.push(Point {
                    experiment: "qos",
                    pattern: format!("pinned{}", spec.qos_vault),
                    size,
                    ports: 4,
                    position: Some(position),
                    port: Some(port),
                    n: None,
                    stats: PointStats::of_port(&res, port as usize),
                });
            }
        }
    }
    Ok(Report { points, aux: Vec::new() })
}

/// All 4-of-16 vault subsets in lexicographic order.
pub fn vault_combinations() -> Vec<[u8; 4]> {
    let mut out = Vec::with_capacity(1820);
    for a in 0..16u8 {
        for b in a + 1..16 {
            for c in b + 1..16 {
                for d in c + 1..16 {
                    out.push([a, b, c, d]);
                }
            }
        }
    }
    out
}

/// `k` distinct subsets chosen by `seed`, kept in lexicographic order.
pub fn sample_combinations(k: usize, seed: u64) -> Vec<[u8; 4]> {
    let mut all = vault_combinations();
    let k = k.min(all.len());
    let mut rng = Prng::new(seed);
    for i in 0..k {
        let j = i + (rng.next_u64() % (all.len() - i) as u64) as usize;
        all.swap(i, j);
    }
    all.truncate(k);
    all.sort_unstable();
    all
}

/// Per-size spread across the combinations run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SizeSpread {
    pub size: u32,
    pub combinations: usize,
    pub mean_latency_ns: f64,
    pub stddev_latency_ns: f64,
}

/// Four ports, port i pinned to vault i of each subset.
pub fn run_combinations(spec: &ExperimentSpec) -> Result<(Report, Vec<SizeSpread>), ExperimentError> {
    let mut r = Runner::new(spec)?;
    let combos = match spec.sample {
        Some(k) => sample_combinations(k, spec.seed),
        None => vault_combinations(),
    };
    let mut points = Vec::new();
    let mut hist = Table::new(&["size", "vault", "bin_start_ns", "count"]);
    let mut spread = Vec::new();
    let mut summary = Table::new(&["size", "combinations", "mean_latency_ns", "stddev_latency_ns"]);
    for &size in &spec.sizes {
        // vault -> histogram of per-request latency
        let mut per_vault: BTreeMap<u8, Histogram> = BTreeMap::new();
        let (mut n, mut sum, mut sq) = (0u64, 0u128, 0u128);
        for combo in &combos {
            let ports = combo.iter().enumerate().map(|(i, &v)| r.port(i, size, vault_masks(&r.map, v))).collect();
            let cfg = r.system(ports);
            let label = format!("v{}-{}-{}-{}", combo[0], combo[1], combo[2], combo[3]);
            let res = r.run(&format!("combos {size} {label}"), cfg)?;
            for (i, &v) in combo.iter().enumerate() {
                let m = &res.ports[i].monitor;
                let h = per_vault.entry(v).or_insert_with(|| Histogram::new(0.0, m.histogram.width));
                for (b, &c) in m.histogram.counts.iter().enumerate() {
                    if c > 0 {
                        let x = m.histogram.bin_start(b);
                        for _ in 0..c {
                            h.add(x);
                        }
                    }
                }
                n += m.reads;
                sum += m.total_read_latency;
                sq += m.total_sq_read_latency;
            }
            points.push(Point {
                experiment: "combos",
                pattern: label,
                size,
                ports: 4,
                position: None,
                port: None,
                n: None,
                stats: PointStats::of(&res),
            });
        }
        for (v, h) in &per_vault {
            for (b, &c) in h.counts.iter().enumerate() {
                if c > 0 {
                    hist.rows.push(vec![size.to_string(), v.to_string(), f3(h.bin_start(b)), c.to_string()]);
                }
            }
        }
        if n > 0 {
            let mean = sum as f64 / n as f64;
            let var = (sq as f64 / n as f64 - mean * mean).max(0.0);
            let s = SizeSpread {
                size,
                combinations: combos.len(),
                mean_latency_ns: mean / 1_000.0,
                stddev_latency_ns: var.sqrt() / 1_000.0,
            };
            summary.rows.push(vec![
                size.to_string(),
                s.combinations.to_string(),
                f3(s.mean_latency_ns),
                f3(s.stddev_latency_ns),
            ]);
            spread.push(s);
        }
    }
    Ok((Report { points, aux: vec![("hist", hist), ("summary", summary)] }, spread))
}

/// Each (pattern, size) with 1..=ports active ports.
pub fn run_port_sweep(spec: &ExperimentSpec) -> Result<Report, ExperimentError> {
    let mut r = Runner::new(spec)?;
    let mut points = Vec::new();
    for &pattern in &spec.patterns {
        let masks = pattern.masks(&r.map)?;
        for &size in &spec.sizes {
            for active in 1..=spec.ports {
                let ports = (0..active as usize).map(|i| r.port(i, size, masks)).collect();
                let cfg = r.system(ports);
                let res = r.run(&format!("portsweep {pattern} {size} {active}"), cfg)?;
                points.push(Point {
                    experiment: "portsweep",
                    pattern: pattern.name(),
                    size,
                    ports: active,
                    position: None,
                    port: None,
                    n: None,
                    stats: PointStats::of(&res),
                });
            }
        }
    }
    Ok(Report { points, aux: Vec::new() })
}

/// Runs whatever `spec.kind` names.
pub fn run(spec: &ExperimentSpec) -> Result<Report, ExperimentError> {
    match spec.kind {
        ExperimentKind::Gups => run_gups_sweep(spec),
        ExperimentKind::Lowload => run_lowload_stream(spec).map(|(r, _)| r),
        ExperimentKind::Qos => run_qos_fourport(spec),
        ExperimentKind::Combos => run_combinations(spec).map(|(r, _)| r),
        ExperimentKind::PortSweep => run_port_sweep(spec),
    }
}
