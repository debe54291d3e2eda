//! Host-side traffic: GUPS-style address generation with mask/anti-mask,
//! trace replay, tag-limited issue and per-port latency monitoring.

use std::collections::HashMap;
use std::path::Path;

use thiserror::Error;

use crate::protocol::{self, Command, Packet, ADDRESS_MASK};
use crate::simkernel::SimTime;
use crate::stats::Histogram;

/// 187.5 MHz port clock.
pub const DEFAULT_ISSUE_PERIOD: SimTime = SimTime::from_ps(5_333);
pub const DEFAULT_TAG_POOL: u32 = 64;
pub const MAX_PORTS: usize = 9;
pub const HISTOGRAM_BIN_NS: f64 = 16.0;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HostError {
    #[error("invalid port config: {0}")]
    Config(String),
    #[error("port {port}: completion for tag {tag} which is not in flight")]
    UnknownTag { port: u8, tag: u16 },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TraceError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("reading trace: {0}")]
    Io(String),
}

/// splitmix64: state += 0x9E3779B97F4A7C15, then two xor-shift-multiply rounds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prng {
    state: u64,
}

impl Prng {
    pub fn new(seed: u64) -> Self {
        Prng { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AddressMode {
    Random,
    Linear,
    Trace,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RequestMix {
    ReadOnly,
    WriteOnly,
    Mixed { read_fraction: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PortConfig {
    pub id: u8,
    pub mode: AddressMode,
    pub mix: RequestMix,
    pub req_size: u32,
    /// Bits forced to zero.
    pub mask: u64,
    /// Bits forced to one.
    pub antimask: u64,
    pub tag_pool: u32,
    pub issue_period: SimTime,
    /// Stop after this many requests; `None` issues until the run ends.
    pub budget: Option<u64>,
    pub record_writes: bool,
    pub seed: u64,
}

impl Default for PortConfig {
    fn default() -> Self {
        PortConfig {
            id: 0,
            mode: AddressMode::Random,
            mix: RequestMix::ReadOnly,
            req_size: 64,
            mask: 0,
            antimask: 0,
            tag_pool: DEFAULT_TAG_POOL,
            issue_period: DEFAULT_ISSUE_PERIOD,
            budget: None,
            record_writes: false,
            seed: 1,
        }
    }
}

impl PortConfig {
    pub fn validate(&self) -> Result<(), HostError> {
        if usize::from(self.id) >= MAX_PORTS {
            return Err(HostError::Config(format!("port id {} >= {MAX_PORTS}", self.id)));
        }
        if self.mask & self.antimask != 0 {
            return Err(HostError::Config("mask and anti-mask overlap".into()));
        }
        if self.tag_pool == 0 || self.tag_pool > u32::from(protocol::MAX_TAG) + 1 {
            return Err(HostError::Config(format!("tag pool {} out of range", self.tag_pool)));
        }
        if !protocol::REQUEST_SIZES.contains(&self.req_size) {
            return Err(HostError::Config(format!("request size {} unsupported", self.req_size)));
        }
        if let RequestMix::Mixed { read_fraction } = self.mix {
            if !(0.0..=1.0).contains(&read_fraction) {
                return Err(HostError::Config("read fraction outside [0, 1]".into()));
            }
        }
        Ok(())
    }
}

/// Address generator state for one port.
#[derive(Debug, Clone)]
pub struct AddressGen {
    prng: Prng,
    linear_index: u64,
}

/// Scatters the low bits of `value` into the set bits of `positions`.
fn deposit_bits(mut value: u64, positions: u64) -> u64 {
    let mut out = 0;
    let mut p = positions;
    while p != 0 && value != 0 {
        let bit = p & p.wrapping_neg();
        if value & 1 == 1 {
            out |= bit;
        }
        value >>= 1;
        p &= p - 1;
    }
    out
}

impl AddressGen {
    pub fn new(seed: u64) -> Self {
        AddressGen { prng: Prng::new(seed), linear_index: 0 }
    }

    pub fn prng(&mut self) -> &mut Prng {
        &mut self.prng
    }

    /// RANDOM: `(raw & !mask) | antimask`, aligned down to the request size.
    /// LINEAR: the n-th request-sized block of the unmasked region, then
    /// mask/anti-mask applied.
    pub fn next_address(&mut self, cfg: &PortConfig) -> u64 {
        let align = !(u64::from(cfg.req_size) - 1);
        match cfg.mode {
            AddressMode::Linear => {
                let free = ADDRESS_MASK & align & !cfg.mask & !cfg.antimask;
                let slots = free.count_ones();
                let idx = if slots >= 64 { self.linear_index } else { self.linear_index % (1u64 << slots) };
                self.linear_index += 1;
                (deposit_bits(idx, free) | cfg.antimask) & !cfg.mask
            }
            _ => {
                let raw = self.prng.next_u64() & ADDRESS_MASK;
                ((raw & !cfg.mask) | cfg.antimask) & align
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceRecord {
    pub op: Command,
    pub address: u64,
    pub size: u32,
}

/// Parses `R|W <hex-address> <size>` lines; `#` starts a comment.
pub fn parse_trace(text: &str) -> Result<Vec<TraceRecord>, TraceError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| TraceError::Parse { line: i + 1, msg };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(err(format!("expected 3 fields, found {}", fields.len())));
        }
        let op = match fields[0] {
            "R" | "r" => Command::Read,
            "W" | "w" => Command::Write,
            other => return Err(err(format!("unknown operation {other:?}"))),
        };
        let hex = fields[1].trim_start_matches("0x").trim_start_matches("0X");
        let address = u64::from_str_radix(hex, 16).map_err(|e| err(format!("bad address {:?}: {e}", fields[1])))?;
        if address > ADDRESS_MASK {
            return Err(err(format!("address {address:#x} exceeds 34 bits")));
        }
        let size: u32 = fields[2].parse().map_err(|e| err(format!("bad size {:?}: {e}", fields[2])))?;
        if !protocol::REQUEST_SIZES.contains(&size) {
            return Err(err(format!("unsupported size {size}")));
        }
        out.push(TraceRecord { op, address, size });
    }
    Ok(out)
}

pub fn load_trace(path: &Path) -> Result<Vec<TraceRecord>, TraceError> {
    let text = std::fs::read_to_string(path).map_err(|e| TraceError::Io(format!("{}: {e}", path.display())))?;
    parse_trace(&text)
}

/// Per-port counters; latencies in ps.
#[derive(Debug, Clone, PartialEq)]
pub struct Monitor {
    pub reads: u64,
    pub writes: u64,
    pub total_read_latency: u128,
    /// Sum of squared read latencies, ps^2.
    pub total_sq_read_latency: u128,
    pub min_latency: u64,
    pub max_latency: u64,
    pub histogram: Histogram,
    pub write_latency_total: u128,
    pub write_latency_count: u64,
    pub read_bytes: u64,
    pub write_bytes: u64,
}

impl Default for Monitor {
    fn default() -> Self {
        Monitor {
            reads: 0,
            writes: 0,
            total_read_latency: 0,
            total_sq_read_latency: 0,
            min_latency: u64::MAX,
            max_latency: 0,
            histogram: Histogram::new(0.0, HISTOGRAM_BIN_NS),
            write_latency_total: 0,
            write_latency_count: 0,
            read_bytes: 0,
            write_bytes: 0,
        }
    }
}

impl Monitor {
    pub fn record_read(&mut self, latency: SimTime, bytes: u32) {
        self.reads += 1;
        self.read_bytes += u64::from(bytes);
        self.total_read_latency += u128::from(latency.0);
        self.total_sq_read_latency += u128::from(latency.0) * u128::from(latency.0);
        self.min_latency = self.min_latency.min(latency.0);
        self.max_latency = self.max_latency.max(latency.0);
        self.histogram.add(latency.as_ns());
    }

    /// Aggregate latency divided by the number of reads, in ns.
    pub fn mean_read_latency_ns(&self) -> Option<f64> {
        if self.reads == 0 {
            None
        } else {
            Some(self.total_read_latency as f64 / self.reads as f64 / 1_000.0)
        }
    }

    pub fn min_latency_ns(&self) -> Option<f64> {
        (self.reads > 0).then(|| self.min_latency as f64 / 1_000.0)
    }

    pub fn max_latency_ns(&self) -> Option<f64> {
        (self.reads > 0).then(|| self.max_latency as f64 / 1_000.0)
    }
}

/// A request produced by a port.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HostRequest {
    pub packet: Packet,
    pub command: Command,
    pub bytes: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IssueOutcome {
    Issued(HostRequest),
    /// Issue period has not elapsed.
    WaitUntil(SimTime),
    /// All tags in flight.
    Stalled,
    /// Budget or trace exhausted.
    Done,
}

#[derive(Debug, Clone, Copy)]
struct InFlight {
    issued: SimTime,
    command: Command,
    bytes: u32,
}

pub struct Port {
    pub cfg: PortConfig,
    gen: AddressGen,
    trace: Vec<TraceRecord>,
    trace_pos: usize,
    free_tags: Vec<u16>,
    in_flight: HashMap<u16, InFlight>,
    next_issue: SimTime,
    issued: u64,
    pub max_in_flight: usize,
    pub monitor: Monitor,
}

impl Port {
    pub fn new(cfg: PortConfig) -> Result<Self, HostError> {
        cfg.validate()?;
        // Lowest tag handed out first.
        let free_tags = (0..cfg.tag_pool as u16).rev().collect();
        let gen = AddressGen::new(cfg.seed);
        Ok(Port {
            cfg,
            gen,
            trace: Vec::new(),
            trace_pos: 0,
            free_tags,
            in_flight: HashMap::new(),
            next_issue: SimTime::ZERO,
            issued: 0,
            max_in_flight: 0,
            monitor: Monitor::default(),
        })
    }

    pub fn with_trace(mut self, trace: Vec<TraceRecord>) -> Self {
        self.trace = trace;
        self.trace_pos = 0;
        self
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.len()
    }

    pub fn issued(&self) -> u64 {
        self.issued
    }

    fn exhausted(&self) -> bool {
        if self.cfg.mode == AddressMode::Trace && self.trace_pos >= self.trace.len() {
            return true;
        }
        matches!(self.cfg.budget, Some(b) if self.issued >= b)
    }

    pub fn is_done(&self) -> bool {
        self.exhausted() && self.in_flight.is_empty()
    }

    pub fn try_issue(&mut self, now: SimTime) -> IssueOutcome {
        if self.exhausted() {
            return IssueOutcome::Done;
        }
        if now < self.next_issue {
            return IssueOutcome::WaitUntil(self.next_issue);
        }
        let Some(tag) = self.free_tags.pop() else {
            return IssueOutcome::Stalled;
        };
        let (command, address, bytes) = match self.cfg.mode {
            AddressMode::Trace => {
                let r = self.trace[self.trace_pos];
                self.trace_pos += 1;
                (r.op, r.address, r.size)
            }
            _ => {
                let command = match self.cfg.mix {
                    RequestMix::ReadOnly => Command::Read,
                    RequestMix::WriteOnly => Command::Write,
                    RequestMix::Mixed { read_fraction } => {
                        if self.gen.prng().next_f64() < read_fraction {
                            Command::Read
                        } else {
                            Command::Write
                        }
                    }
                };
                (command, self.gen.next_address(&self.cfg), self.cfg.req_size)
            }
        };
        let packet = match command {
            Command::Read => Packet::read_request(tag, address),
            Command::Write => Packet::write_request(tag, address, bytes).expect("validated size"),
        }
        .with_issue_time(now);
        self.in_flight.insert(tag, InFlight { issued: now, command, bytes });
        self.max_in_flight = self.max_in_flight.max(self.in_flight.len());
        self.issued += 1;
        self.next_issue = now + self.cfg.issue_period;
        IssueOutcome::Issued(HostRequest { packet, command, bytes })
    }

    /// Retires the response with `tag`, returning its latency.
    pub fn complete(&mut self, tag: u16, now: SimTime) -> Result<SimTime, HostError> {
        let f = self
            .in_flight
            .remove(&tag)
            .ok_or(HostError::UnknownTag { port: self.cfg.id, tag })?;
        self.free_tags.push(tag);
        let latency = now - f.issued;
        match f.command {
            Command::Read => self.monitor.record_read(latency, f.bytes),
            Command::Write => {
                self.monitor.writes += 1;
                self.monitor.write_bytes += u64::from(f.bytes);
                if self.cfg.record_writes {
                    self.monitor.write_latency_total += u128::from(latency.0);
                    self.monitor.write_latency_count += 1;
                }
            }
        }
        Ok(latency)
    }
}
