//! Wires host ports, links, quadrant switches and vaults into one simulation.
//!
//! Request path: port issue -> host pipeline -> link request lane
//! (serialization) -> cube link layer -> home quadrant switch [-> switch
//! channel -> target switch] -> per-vault egress queue (credit gated,
//! round-robin across sources) -> vault. Responses retrace the route to the
//! port's link and pay the same fixed pipeline stages on the way back.

use std::collections::VecDeque;
use std::io::Write;

use thiserror::Error;

use crate::addressing::{AddressError, AddressMap, AddressMapConfig};
use crate::hostgen::{HostError, IssueOutcome, Monitor, Port, PortConfig, TraceRecord};
use crate::interconnect::{
    home_quadrant, quadrant_of, Channel, CreditCounter, InterconnectConfig, LinkError, RoundRobin, QUADRANTS,
};
use crate::memdev::{Vault, VaultAccess, VaultConfig, VaultCounters};
use crate::protocol::{self, Command, Packet};
use crate::simkernel::{ComponentId, Engine, EventKind, SimTime};
use crate::stats::{BandwidthSample, LittleCheck, QueueProbe};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error(transparent)]
    Address(#[from] AddressError),
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error(transparent)]
    Host(#[from] HostError),
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    pub map: AddressMapConfig,
    pub vault: VaultConfig,
    pub net: InterconnectConfig,
    pub ports: Vec<PortConfig>,
    /// Per-port trace, used by ports in trace mode.
    pub traces: Vec<Option<Vec<TraceRecord>>>,
    /// Ports stop issuing at this time; in-flight requests then drain.
    pub duration: SimTime,
    /// Start of the bandwidth measurement window.
    pub warmup: SimTime,
    /// Window for peak-rate probes.
    pub probe_window: SimTime,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig {
            map: AddressMapConfig::default(),
            vault: VaultConfig::default(),
            net: InterconnectConfig::default(),
            ports: vec![PortConfig::default()],
            traces: Vec::new(),
            duration: SimTime::from_us(2_000),
            warmup: SimTime::from_us(200),
            probe_window: SimTime::from_us(1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ev {
    PortIssue(u8),
    ReqToLink(u32),
    ReqAtSwitch { id: u32, sw: u8 },
    VaultStep(u8),
    Retire(u32),
    RespAtSwitch { id: u32, sw: u8 },
    RespAtPort(u32),
}

impl EventKind for Ev {
    fn kind(&self) -> &'static str {
        match self {
            Ev::PortIssue(_) => "port_issue",
            Ev::ReqToLink(_) => "req_link",
            Ev::ReqAtSwitch { .. } => "req_switch",
            Ev::VaultStep(_) => "vault_step",
            Ev::Retire(_) => "retire",
            Ev::RespAtSwitch { .. } => "resp_switch",
            Ev::RespAtPort(_) => "resp_port",
        }
    }
}

// Component ids used in the dispatch trace.
const PORT_BASE: u32 = 0;
const LINK_BASE: u32 = 100;
const SWITCH_BASE: u32 = 200;
const VAULT_BASE: u32 = 300;

#[derive(Debug, Clone, Copy)]
struct Req {
    port: u8,
    link: u8,
    packet: Packet,
    command: Command,
    bytes: u32,
    vault: u8,
    access: VaultAccess,
    queued_at: SimTime,
}

/// Per-vault egress at its quadrant switch.
struct Egress {
    inputs: Vec<VecDeque<u32>>,
    rr: RoundRobin,
    credits: CreditCounter,
    probe: QueueProbe,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PortReport {
    pub id: u8,
    pub req_size: u32,
    pub issued: u64,
    pub max_in_flight: usize,
    pub monitor: Monitor,
    /// Completions inside the measurement window.
    pub window_reads: u64,
    pub window_writes: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaultReport {
    pub id: u8,
    pub counters: VaultCounters,
    pub input_queue: LittleCheck,
    pub bank_queues: LittleCheck,
    pub resident: LittleCheck,
    pub egress_queue: LittleCheck,
    pub max_egress_occupancy: u64,
    /// Vault data-bus bytes of accesses retired inside the measurement window.
    pub window_bus_bytes: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkReport {
    pub id: u8,
    pub request_utilization: f64,
    pub response_utilization: f64,
    pub request_bytes: u64,
    pub response_bytes: u64,
    pub request_peak_gbps: f64,
    pub response_peak_gbps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwitchReport {
    pub from: u8,
    pub to: u8,
    pub utilization: f64,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub duration: SimTime,
    pub end: SimTime,
    pub window_ns: f64,
    pub ports: Vec<PortReport>,
    pub vaults: Vec<VaultReport>,
    pub links: Vec<LinkReport>,
    pub switch_channels: Vec<SwitchReport>,
    pub events: u64,
}

impl RunResult {
    /// Per-direction bytes of accesses completed in the measurement window,
    /// counted with full packet sizes.
    pub fn bandwidth(&self) -> BandwidthSample {
        let mut s = BandwidthSample { window_ns: self.window_ns, ..Default::default() };
        for p in &self.ports {
            s.add_accesses(Command::Read, p.req_size, p.window_reads);
            s.add_accesses(Command::Write, p.req_size, p.window_writes);
        }
        s
    }

    pub fn total_reads(&self) -> u64 {
        self.ports.iter().map(|p| p.monitor.reads).sum()
    }

    /// Mean read latency over all ports (aggregate latency / reads), ns.
    pub fn mean_read_latency_ns(&self) -> Option<f64> {
        let reads = self.total_reads();
        if reads == 0 {
            return None;
        }
        let total: u128 = self.ports.iter().map(|p| p.monitor.total_read_latency).sum();
        Some(total as f64 / reads as f64 / 1_000.0)
    }

    pub fn max_read_latency_ns(&self) -> Option<f64> {
        self.ports.iter().filter_map(|p| p.monitor.max_latency_ns()).reduce(f64::max)
    }

    pub fn min_read_latency_ns(&self) -> Option<f64> {
        self.ports.iter().filter_map(|p| p.monitor.min_latency_ns()).reduce(f64::min)
    }

    /// Pooled population standard deviation of read latency, ns.
    pub fn read_latency_stddev_ns(&self) -> Option<f64> {
        let n = self.total_reads();
        if n == 0 {
            return None;
        }
        let sum: u128 = self.ports.iter().map(|p| p.monitor.total_read_latency).sum();
        let sq: u128 = self.ports.iter().map(|p| p.monitor.total_sq_read_latency).sum();
        let mean = sum as f64 / n as f64;
        let var = (sq as f64 / n as f64 - mean * mean).max(0.0);
        Some(var.sqrt() / 1_000.0)
    }

    /// Busiest vault's data-bus throughput over the measurement window, GB/s.
    pub fn max_vault_bus_gbps(&self) -> f64 {
        if self.window_ns <= 0.0 {
            return 0.0;
        }
        self.vaults.iter().map(|v| v.window_bus_bytes as f64 / self.window_ns).fold(0.0, f64::max)
    }

    /// Every instrumented queue with enough traffic to be meaningful.
    pub fn little_checks(&self, min_samples: u64) -> Vec<(String, LittleCheck)> {
        let mut out = Vec::new();
        for v in &self.vaults {
            for (name, c) in [
                ("egress", v.egress_queue),
                ("input", v.input_queue),
                ("banks", v.bank_queues),
                ("resident", v.resident),
            ] {
                if c.samples >= min_samples {
                    out.push((format!("vault{}.{name}", v.id), c));
                }
            }
        }
        out
    }
}

pub struct System {
    cfg: SystemConfig,
    map: AddressMap,
    engine: Engine<Ev>,
    ports: Vec<Port>,
    issue_scheduled: Vec<bool>,
    stalled: Vec<bool>,
    window_reads: Vec<u64>,
    window_writes: Vec<u64>,
    window_bus_bytes: Vec<u64>,
    link_req: Vec<Channel>,
    link_resp: Vec<Channel>,
    /// Directed switch-to-switch channels, index `from * 4 + to`.
    sw_channels: Vec<Channel>,
    egress: Vec<Egress>,
    vaults: Vec<Vault>,
    reqs: Vec<Option<Req>>,
    free_ids: Vec<u32>,
}

impl System {
    pub fn new(cfg: SystemConfig) -> Result<Self, ConfigError> {
        let map = AddressMap::new(cfg.map)?;
        cfg.net.link.validate()?;
        if map.config().vaults != 16 {
            return Err(ConfigError::Other("the switch topology models a 16-vault cube".into()));
        }
        if cfg.vault.banks != map.config().banks_per_vault {
            return Err(ConfigError::Other("vault bank count disagrees with the address map".into()));
        }
        if cfg.ports.is_empty() {
            return Err(ConfigError::Other("at least one port is required".into()));
        }
        let mut ports = Vec::with_capacity(cfg.ports.len());
        for (i, pc) in cfg.ports.iter().enumerate() {
            if usize::from(pc.id) != i {
                return Err(ConfigError::Other(format!("port {i} has id {}", pc.id)));
            }
            let mut p = Port::new(pc.clone())?;
            if let Some(Some(t)) = cfg.traces.get(i) {
                p = p.with_trace(t.clone());
            }
            ports.push(p);
        }
        let links = cfg.net.link.links as usize;
        let w = cfg.probe_window;
        let n_ports = ports.len();
        let egress = (0..16)
            .map(|_| Egress {
                inputs: vec![VecDeque::new(); QUADRANTS as usize + links],
                rr: RoundRobin::default(),
                credits: CreditCounter::new(cfg.vault.controller_queue_depth),
                probe: QueueProbe::default(),
            })
            .collect();
        let vaults = (0..16).map(|v| Vault::new(v, cfg.vault, w)).collect();
        Ok(System {
            map,
            engine: Engine::new(),
            ports,
            issue_scheduled: vec![false; n_ports],
            stalled: vec![false; n_ports],
            window_reads: vec![0; n_ports],
            window_writes: vec![0; n_ports],
            window_bus_bytes: vec![0; 16],
            link_req: (0..links).map(|_| Channel::new(w)).collect(),
            link_resp: (0..links).map(|_| Channel::new(w)).collect(),
            sw_channels: (0..16).map(|_| Channel::new(w)).collect(),
            egress,
            vaults,
            reqs: Vec::new(),
            free_ids: Vec::new(),
            cfg,
        })
    }

    pub fn with_trace(mut self, sink: Box<dyn Write>) -> Self {
        self.engine = Engine::new().with_trace(sink);
        self
    }

    pub fn map(&self) -> &AddressMap {
        &self.map
    }

    /// Runs until every port has stopped issuing and all requests drained.
    pub fn run(mut self) -> Result<RunResult, HostError> {
        let mut failure = None;
        self.engine_loop(&mut failure);
        if let Some(e) = failure {
            return Err(e);
        }
        Ok(self.finish())
    }

    fn engine_loop(&mut self, failure: &mut Option<HostError>) {
        // The engine is moved out so handlers can borrow the model mutably.
        let mut engine = std::mem::take(&mut self.engine);
        for p in 0..self.ports.len() {
            self.schedule_issue(&mut engine, p as u8, SimTime::ZERO);
        }
        engine.run_to_completion(|eng, ev| {
            if failure.is_some() {
                return;
            }
            if let Err(e) = self.handle(eng, ev.payload) {
                *failure = Some(e);
            }
        });
        self.engine = engine;
    }

    fn schedule_issue(&mut self, eng: &mut Engine<Ev>, port: u8, at: SimTime) {
        let p = port as usize;
        if !self.issue_scheduled[p] {
            self.issue_scheduled[p] = true;
            eng.schedule(at, ComponentId(PORT_BASE + u32::from(port)), Ev::PortIssue(port))
                .expect("issue time is never in the past");
        }
    }

    fn alloc(&mut self, r: Req) -> u32 {
        match self.free_ids.pop() {
            Some(id) => {
                self.reqs[id as usize] = Some(r);
                id
            }
            None => {
                self.reqs.push(Some(r));
                (self.reqs.len() - 1) as u32
            }
        }
    }

    fn req(&self, id: u32) -> &Req {
        self.reqs[id as usize].as_ref().expect("live request")
    }

    fn handle(&mut self, eng: &mut Engine<Ev>, ev: Ev) -> Result<(), HostError> {
        let now = eng.now();
        let net = self.cfg.net;
        match ev {
            Ev::PortIssue(p) => {
                self.issue_scheduled[p as usize] = false;
                self.issue(eng, p);
            }
            Ev::ReqToLink(id) => {
                let r = *self.req(id);
                let flits = protocol::total_flits(&r.packet).expect("well-formed");
                let dur = net.link.serialize_flits(flits);
                let done = self.link_req[r.link as usize].reserve(now, dur, u64::from(flits) * 16);
                let sw = home_quadrant(r.link);
                eng.schedule(
                    done + net.link_layer + net.hop_latency,
                    ComponentId(SWITCH_BASE + u32::from(sw)),
                    Ev::ReqAtSwitch { id, sw },
                )
                .expect("future");
            }
            Ev::ReqAtSwitch { id, sw } => {
                let r = *self.req(id);
                let target = quadrant_of(r.vault);
                if sw == target {
                    // Routes are link -> home [-> target], so the source is
                    // the link itself or the home switch.
                    let home = home_quadrant(r.link);
                    let src = if sw == home { QUADRANTS as usize + r.link as usize } else { home as usize };
                    let e = &mut self.egress[r.vault as usize];
                    e.inputs[src].push_back(id);
                    e.probe.enter(now);
                    if let Some(req) = self.reqs[id as usize].as_mut() {
                        req.queued_at = now;
                    }
                    self.pump_vault(eng, r.vault);
                } else {
                    let flits = protocol::total_flits(&r.packet).expect("well-formed");
                    let dur = SimTime(net.noc_flit_time.0 * u64::from(flits));
                    let ch = &mut self.sw_channels[(sw * QUADRANTS + target) as usize];
                    let done = ch.reserve(now, dur, u64::from(flits) * 16);
                    eng.schedule(
                        done + net.hop_latency,
                        ComponentId(SWITCH_BASE + u32::from(target)),
                        Ev::ReqAtSwitch { id, sw: target },
                    )
                    .expect("future");
                }
            }
            Ev::VaultStep(v) => self.pump_vault(eng, v),
            Ev::Retire(id) => {
                let r = *self.req(id);
                let at = self.vaults[r.vault as usize].retire(&r.access, now);
                if now >= self.cfg.warmup && now <= self.cfg.duration {
                    let beats = self.cfg.vault.beats(r.bytes);
                    self.window_bus_bytes[r.vault as usize] += u64::from(beats) * u64::from(self.cfg.vault.bus_width);
                }
                let resp = Packet::response_to(&r.packet, r.bytes).expect("valid request");
                if let Some(req) = self.reqs[id as usize].as_mut() {
                    req.packet = resp;
                }
                let sw = quadrant_of(r.vault);
                eng.schedule(
                    at + net.hop_latency,
                    ComponentId(SWITCH_BASE + u32::from(sw)),
                    Ev::RespAtSwitch { id, sw },
                )
                .expect("future");
            }
            Ev::RespAtSwitch { id, sw } => {
                let r = *self.req(id);
                let flits = protocol::total_flits(&r.packet).expect("well-formed");
                let home = home_quadrant(r.link);
                if sw == home {
                    let dur = net.link.serialize_flits(flits);
                    let done = self.link_resp[r.link as usize].reserve(now, dur, u64::from(flits) * 16);
                    eng.schedule(
                        done + net.link_layer + net.host_pipeline,
                        ComponentId(PORT_BASE + u32::from(r.port)),
                        Ev::RespAtPort(id),
                    )
                    .expect("future");
                } else {
                    let dur = SimTime(net.noc_flit_time.0 * u64::from(flits));
                    let done = self.sw_channels[(sw * QUADRANTS + home) as usize].reserve(now, dur, u64::from(flits) * 16);
                    eng.schedule(
                        done + net.hop_latency,
                        ComponentId(SWITCH_BASE + u32::from(home)),
                        Ev::RespAtSwitch { id, sw: home },
                    )
                    .expect("future");
                }
            }
            Ev::RespAtPort(id) => {
                let r = self.reqs[id as usize].take().expect("live request");
                self.free_ids.push(id);
                let p = r.port as usize;
                self.ports[p].complete(r.packet.tag, now)?;
                if now >= self.cfg.warmup && now <= self.cfg.duration {
                    match r.command {
                        Command::Read => self.window_reads[p] += 1,
                        Command::Write => self.window_writes[p] += 1,
                    }
                }
                if self.stalled[p] {
                    self.stalled[p] = false;
                    self.issue(eng, r.port);
                }
            }
        }
        Ok(())
    }
}

impl System {
    fn issue(&mut self, eng: &mut Engine<Ev>, port: u8) {
        let now = eng.now();
        if now >= self.cfg.duration {
            return;
        }
        let p = port as usize;
        match self.ports[p].try_issue(now) {
            IssueOutcome::Issued(hr) => {
                let d = self.map.decode(hr.packet.address);
                let link = (p % self.link_req.len()) as u8;
                let access = VaultAccess {
                    id: 0,
                    bank: d.bank,
                    command: hr.command,
                    bytes: hr.bytes,
                    arrived: SimTime::ZERO,
                    bank_enqueued: SimTime::ZERO,
                };
                let id = self.alloc(Req {
                    port,
                    link,
                    packet: hr.packet,
                    command: hr.command,
                    bytes: hr.bytes,
                    vault: d.vault,
                    access,
                    queued_at: SimTime::ZERO,
                });
                if let Some(r) = self.reqs[id as usize].as_mut() {
                    r.access.id = id;
                }
                eng.schedule_in(self.cfg.net.host_pipeline, ComponentId(LINK_BASE + u32::from(link)), Ev::ReqToLink(id));
                let next = now + self.ports[p].cfg.issue_period;
                self.schedule_issue(eng, port, next);
            }
            IssueOutcome::WaitUntil(t) => self.schedule_issue(eng, port, t),
            IssueOutcome::Stalled => self.stalled[p] = true,
            IssueOutcome::Done => {}
        }
    }

    /// Forwards queued requests into the vault while credits allow and lets
    /// the vault start whatever became schedulable.
    fn pump_vault(&mut self, eng: &mut Engine<Ev>, v: u8) {
        let now = eng.now();
        let vi = v as usize;
        loop {
            loop {
                let e = &mut self.egress[vi];
                if e.credits.available() == 0 {
                    break;
                }
                let Some((_, id)) = e.rr.arbitrate(&mut e.inputs) else { break };
                let took = e.credits.try_take();
                debug_assert!(took);
                let r = self.reqs[id as usize].as_ref().expect("live request");
                e.probe.leave(now, r.queued_at);
                let admitted = self.vaults[vi].accept(r.access, now);
                assert_eq!(admitted, crate::memdev::Admission::Accepted, "credit held but vault full");
            }
            let out = self.vaults[vi].step(now);
            for _ in 0..out.freed {
                self.egress[vi].credits.give_back();
            }
            for s in &out.started {
                if let Some(r) = self.reqs[s.access.id as usize].as_mut() {
                    r.access = s.access;
                }
                let target = ComponentId(VAULT_BASE + u32::from(v));
                eng.schedule(s.service.bank_ready, target, Ev::VaultStep(v)).expect("future");
                eng.schedule(s.service.complete, target, Ev::Retire(s.access.id)).expect("future");
            }
            if out.freed == 0 {
                break;
            }
        }
    }

    fn finish(self) -> RunResult {
        let end = self.engine.now();
        let span = end;
        let window_ns = (self.cfg.duration.saturating_sub(self.cfg.warmup)).as_ns();
        let ports = self
            .ports
            .iter()
            .enumerate()
            .map(|(i, p)| PortReport {
                id: p.cfg.id,
                req_size: p.cfg.req_size,
                issued: p.issued(),
                max_in_flight: p.max_in_flight,
                monitor: p.monitor.clone(),
                window_reads: self.window_reads[i],
                window_writes: self.window_writes[i],
            })
            .collect();
        let vaults = self
            .vaults
            .iter()
            .zip(&self.egress)
            .zip(&self.window_bus_bytes)
            .map(|((v, e), &wb)| VaultReport {
                id: v.id,
                counters: v.counters.clone(),
                input_queue: v.input_probe.check(end),
                bank_queues: v.bank_probe.check(end),
                resident: v.resident_probe.check(end),
                egress_queue: e.probe.check(end),
                max_egress_occupancy: e.probe.max_occupancy,
                window_bus_bytes: wb,
            })
            .collect();
        let links = self
            .link_req
            .iter()
            .zip(&self.link_resp)
            .enumerate()
            .map(|(i, (rq, rs))| LinkReport {
                id: i as u8,
                request_utilization: rq.utilization(span),
                response_utilization: rs.utilization(span),
                request_bytes: rq.bytes,
                response_bytes: rs.bytes,
                request_peak_gbps: rq.window.peak_gbps(),
                response_peak_gbps: rs.window.peak_gbps(),
            })
            .collect();
        let switch_channels = self
            .sw_channels
            .iter()
            .enumerate()
            .filter(|(i, _)| i / QUADRANTS as usize != i % QUADRANTS as usize)
            .map(|(i, c)| SwitchReport {
                from: (i / QUADRANTS as usize) as u8,
                to: (i % QUADRANTS as usize) as u8,
                utilization: c.utilization(span),
                bytes: c.bytes,
            })
            .collect();
        RunResult {
            duration: self.cfg.duration,
            end,
            window_ns,
            ports,
            vaults,
            links,
            switch_channels,
            events: self.engine.dispatched(),
        }
    }
}

/// Builds and runs one simulation.
pub fn simulate(cfg: SystemConfig) -> Result<RunResult, ConfigError> {
    Ok(System::new(cfg)?.run()?)
}
