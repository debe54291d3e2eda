//! Vault model: controller input queue, per-bank queues, closed-page DRAM
//! timing and the shared 32 B TSV data bus.
//!
//! The vault is passive. The system feeds it arrivals through
//! [`Vault::accept`] and calls [`Vault::step`] whenever something may have
//! become schedulable (an arrival or a bank turning idle). `step` reports the
//! accesses it started, with their completion times, and how many input-queue
//! slots were freed so the caller can return credits upstream.

use std::collections::VecDeque;

use crate::protocol::Command;
use crate::simkernel::SimTime;
use crate::stats::{QueueProbe, WindowCounter};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DramTiming {
    pub t_rcd: SimTime,
    pub t_cl: SimTime,
    pub t_rp: SimTime,
}

impl Default for DramTiming {
    fn default() -> Self {
        DramTiming {
            t_rcd: SimTime::from_ps(13_750),
            t_cl: SimTime::from_ps(13_750),
            t_rp: SimTime::from_ps(13_500),
        }
    }
}

impl DramTiming {
    pub fn sum(&self) -> SimTime {
        self.t_rcd + self.t_cl + self.t_rp
    }
}

/// When a bank may accept its next activate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrechargePolicy {
    /// Auto-precharge issued with the column command; the bank is ready again
    /// t_rcd + t_rp after the activate while the column path drains the data.
    Overlapped,
    /// Precharge starts after the last data beat.
    AfterData,
}

/// How the controller moves its input queue into the bank queues.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dispatch {
    /// Strict FIFO: a head whose bank queue is full blocks everything behind it.
    InOrder,
    /// Entries for banks with room pass a blocked head. Order per bank is kept.
    Bypass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VaultConfig {
    pub banks: u32,
    pub bank_size: u64,
    pub bus_width: u32,
    pub bus_beat: SimTime,
    pub controller_queue_depth: u32,
    pub bank_queue_depth: u32,
    /// Controller + TSV pass-through applied to every response.
    pub passthrough: SimTime,
    pub timing: DramTiming,
    pub precharge: PrechargePolicy,
    pub dispatch: Dispatch,
}

impl Default for VaultConfig {
    fn default() -> Self {
        VaultConfig {
            banks: 16,
            bank_size: 16 << 20,
            bus_width: 32,
            bus_beat: SimTime::from_ps(3_200),
            controller_queue_depth: 128,
            bank_queue_depth: 16,
            passthrough: SimTime::from_ns(4),
            timing: DramTiming::default(),
            precharge: PrechargePolicy::Overlapped,
            dispatch: Dispatch::Bypass,
        }
    }
}

impl VaultConfig {
    /// Internal data-bus bandwidth in GB/s.
    pub fn internal_gbps(&self) -> f64 {
        f64::from(self.bus_width) / self.bus_beat.as_ns()
    }

    pub fn beats(&self, bytes: u32) -> u32 {
        bytes.div_ceil(self.bus_width).max(1)
    }
}

/// Timeline of one bank access.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BankService {
    pub start: SimTime,
    /// First data beat may use the bus.
    pub data_ready: SimTime,
    /// Last beat leaves the bus.
    pub data_done: SimTime,
    /// Bank may activate again.
    pub bank_ready: SimTime,
    /// Access retires from the controller (closed-page sequence complete).
    pub complete: SimTime,
}

/// Computes an access timeline and reserves its beats on the vault bus.
pub fn bank_service(cfg: &VaultConfig, start: SimTime, bytes: u32, bus_free: &mut SimTime) -> BankService {
    let t = &cfg.timing;
    let data_ready = start + t.t_rcd + t.t_cl;
    let bus_start = data_ready.max(*bus_free);
    let data_done = bus_start + SimTime(cfg.bus_beat.0 * u64::from(cfg.beats(bytes)));
    *bus_free = data_done;
    let bank_ready = match cfg.precharge {
        PrechargePolicy::Overlapped => start + t.t_rcd + t.t_rp,
        PrechargePolicy::AfterData => data_done + t.t_rp,
    };
    BankService {
        start,
        data_ready,
        data_done,
        bank_ready,
        complete: data_done + t.t_rp,
    }
}

/// One request held by a vault.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VaultAccess {
    /// Caller's handle for the in-flight request.
    pub id: u32,
    pub bank: u8,
    pub command: Command,
    pub bytes: u32,
    pub arrived: SimTime,
    pub bank_enqueued: SimTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Admission {
    Accepted,
    BackPressured,
}

#[derive(Debug, Clone, Default)]
struct Bank {
    busy_until: SimTime,
    queue: VecDeque<(u64, VaultAccess)>,
}

/// Per-vault counters exported into reports.
#[derive(Debug, Clone, PartialEq)]
pub struct VaultCounters {
    pub admitted: u64,
    pub completed: u64,
    pub completed_reads: u64,
    pub completed_writes: u64,
    pub rejected: u64,
    pub max_input_occupancy: u64,
    pub bus_busy: SimTime,
    pub bus_bytes: u64,
    pub read_payload: WindowCounter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Started {
    pub access: VaultAccess,
    pub service: BankService,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StepOutcome {
    /// Input-queue slots freed (credits to return upstream).
    pub freed: u32,
    pub started: Vec<Started>,
}

pub struct Vault {
    pub id: u8,
    cfg: VaultConfig,
    input: VecDeque<VaultAccess>,
    banks: Vec<Bank>,
    bus_free: SimTime,
    seq: u64,
    pub counters: VaultCounters,
    pub input_probe: QueueProbe,
    pub bank_probe: QueueProbe,
    /// Arrival to retirement.
    pub resident_probe: QueueProbe,
}

impl Vault {
    pub fn new(id: u8, cfg: VaultConfig, window: SimTime) -> Self {
        Vault {
            id,
            cfg,
            input: VecDeque::new(),
            banks: vec![Bank::default(); cfg.banks as usize],
            bus_free: SimTime::ZERO,
            seq: 0,
            counters: VaultCounters {
                admitted: 0,
                completed: 0,
                completed_reads: 0,
                completed_writes: 0,
                rejected: 0,
                max_input_occupancy: 0,
                bus_busy: SimTime::ZERO,
                bus_bytes: 0,
                read_payload: WindowCounter::new(window),
            },
            input_probe: QueueProbe::default(),
            bank_probe: QueueProbe::default(),
            resident_probe: QueueProbe::default(),
        }
    }

    pub fn config(&self) -> &VaultConfig {
        &self.cfg
    }

    pub fn input_len(&self) -> usize {
        self.input.len()
    }

    pub fn bank_queue_len(&self, bank: u8) -> usize {
        self.banks[bank as usize].queue.len()
    }

    /// Admits a request if the input queue has room.
    pub fn accept(&mut self, mut access: VaultAccess, now: SimTime) -> Admission {
        if self.input.len() >= self.cfg.controller_queue_depth as usize {
            self.counters.rejected += 1;
            return Admission::BackPressured;
        }
        access.arrived = now;
        self.input.push_back(access);
        self.counters.admitted += 1;
        self.counters.max_input_occupancy = self.counters.max_input_occupancy.max(self.input.len() as u64);
        self.input_probe.enter(now);
        self.resident_probe.enter(now);
        Admission::Accepted
    }

    /// Moves queued requests into bank queues per the dispatch policy and
    /// starts every idle bank that has work, oldest first.
    pub fn step(&mut self, now: SimTime) -> StepOutcome {
        let mut out = StepOutcome::default();
        self.dispatch(now, &mut out);
        loop {
            let next = self
                .banks
                .iter()
                .enumerate()
                .filter(|(_, b)| b.busy_until <= now)
                .filter_map(|(i, b)| b.queue.front().map(|(s, _)| (*s, i)))
                .min();
            let Some((_, i)) = next else { break };
            let (_, access) = self.banks[i].queue.pop_front().expect("non-empty");
            self.bank_probe.leave(now, access.bank_enqueued);
            let service = bank_service(&self.cfg, now, access.bytes, &mut self.bus_free);
            self.banks[i].busy_until = service.bank_ready;
            let beats = self.cfg.beats(access.bytes);
            self.counters.bus_busy += SimTime(self.cfg.bus_beat.0 * u64::from(beats));
            self.counters.bus_bytes += u64::from(beats * self.cfg.bus_width);
            if access.command == Command::Read {
                let bus_start = service.data_done - SimTime(self.cfg.bus_beat.0 * u64::from(beats));
                self.counters.read_payload.record_span(bus_start, service.data_done, u64::from(access.bytes));
            }
            out.started.push(Started { access, service });
        }
        // Starts free bank-queue slots; refill them right away.
        self.dispatch(now, &mut out);
        out
    }

    fn dispatch(&mut self, now: SimTime, out: &mut StepOutcome) {
        let mut i = 0;
        while i < self.input.len() {
            let b = self.input[i].bank as usize;
            if self.banks[b].queue.len() >= self.cfg.bank_queue_depth as usize {
                if self.cfg.dispatch == Dispatch::InOrder {
                    break;
                }
                i += 1;
                continue;
            }
            let mut a = self.input.remove(i).expect("index in range");
            self.input_probe.leave(now, a.arrived);
            a.bank_enqueued = now;
            self.banks[b].queue.push_back((self.seq, a));
            self.seq += 1;
            self.bank_probe.enter(now);
            out.freed += 1;
        }
    }

    /// Records retirement of a started access. Returns the response delivery time
    /// after the controller pass-through.
    pub fn retire(&mut self, access: &VaultAccess, now: SimTime) -> SimTime {
        self.resident_probe.leave(now, access.arrived);
        self.counters.completed += 1;
        match access.command {
            Command::Read => self.counters.completed_reads += 1,
            Command::Write => self.counters.completed_writes += 1,
        }
        now + self.cfg.passthrough
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn access(id: u32, bank: u8, bytes: u32) -> VaultAccess {
        VaultAccess {
            id,
            bank,
            command: Command::Read,
            bytes,
            arrived: SimTime::ZERO,
            bank_enqueued: SimTime::ZERO,
        }
    }

    #[test]
    fn idle_bank_read_timeline() {
        let cfg = VaultConfig::default();
        let mut bus = SimTime::ZERO;
        let s = bank_service(&cfg, SimTime::ZERO, 32, &mut bus);
        // 41 ns closed-page sequence plus one 3.2 ns beat
        assert_eq!(s.complete, SimTime::from_ps(41_000 + 3_200));
        assert_eq!(s.data_done, SimTime::from_ps(27_500 + 3_200));
        let mut bus = SimTime::ZERO;
        let s = bank_service(&cfg, SimTime::ZERO, 128, &mut bus);
        assert_eq!(s.data_done - s.data_ready, SimTime::from_ps(12_800));
        let mut bus = SimTime::ZERO;
        let s = bank_service(&cfg, SimTime::ZERO, 16, &mut bus);
        assert_eq!(s.data_done - s.data_ready, SimTime::from_ps(3_200));
    }

    #[test]
    fn default_bus_is_10_gbps() {
        assert!((VaultConfig::default().internal_gbps() - 10.0).abs() < 1e-12);
        assert_eq!(DramTiming::default().sum(), SimTime::from_ns(41));
    }

    #[test]
    fn same_bank_back_to_back_after_data_policy() {
        let cfg = VaultConfig { precharge: PrechargePolicy::AfterData, ..Default::default() };
        let mut v = Vault::new(0, cfg, SimTime::from_us(1));
        v.accept(access(1, 3, 32), SimTime::ZERO);
        v.accept(access(2, 3, 32), SimTime::ZERO);
        let first = v.step(SimTime::ZERO);
        assert_eq!(first.started.len(), 1);
        let s1 = first.started[0].service;
        assert_eq!(v.step(s1.bank_ready - SimTime(1)).started.len(), 0);
        let second = v.step(s1.bank_ready);
        let s2 = second.started[0].service;
        assert!(s2.start >= s1.data_done + cfg.timing.t_rp);
    }

    #[test]
    fn overlapped_policy_reuses_bank_after_rcd_plus_rp() {
        let cfg = VaultConfig::default();
        let mut v = Vault::new(0, cfg, SimTime::from_us(1));
        v.accept(access(1, 0, 32), SimTime::ZERO);
        v.accept(access(2, 0, 32), SimTime::ZERO);
        let s1 = v.step(SimTime::ZERO).started[0].service;
        assert_eq!(s1.bank_ready, SimTime::from_ps(27_250));
        assert_eq!(v.step(s1.bank_ready).started.len(), 1);
    }

    #[test]
    fn admission_and_credit_conservation() {
        let cfg = VaultConfig { controller_queue_depth: 2, bank_queue_depth: 1, ..Default::default() };
        let mut v = Vault::new(0, cfg, SimTime::from_us(1));
        assert_eq!(v.accept(access(1, 0, 32), SimTime::ZERO), Admission::Accepted);
        // bank 0 starts immediately; queue slot freed
        assert_eq!(v.step(SimTime::ZERO).freed, 1);
        assert_eq!(v.accept(access(2, 0, 32), SimTime::ZERO), Admission::Accepted);
        assert_eq!(v.accept(access(3, 0, 32), SimTime::ZERO), Admission::Accepted);
        assert_eq!(v.accept(access(4, 0, 32), SimTime::ZERO), Admission::BackPressured);
        // access 2 moves to the bank queue, 3 stays blocked behind it
        assert_eq!(v.step(SimTime(1)).freed, 1);
        assert_eq!(v.accept(access(4, 0, 32), SimTime(1)), Admission::Accepted);
        assert_eq!(v.accept(access(5, 0, 32), SimTime(1)), Admission::BackPressured);
        assert_eq!(v.step(SimTime(2)).freed, 0);
    }

    #[test]
    fn bypass_passes_a_blocked_head_in_order_does_not() {
        for (dispatch, moved) in [(Dispatch::Bypass, 2), (Dispatch::InOrder, 1)] {
            let cfg = VaultConfig { bank_queue_depth: 1, dispatch, ..Default::default() };
            let mut v = Vault::new(0, cfg, SimTime::from_us(1));
            v.accept(access(1, 0, 32), SimTime::ZERO);
            v.step(SimTime::ZERO);
            // bank 0 busy with 1; 2 fills its queue, 3 is blocked, 4 targets bank 5
            for (id, bank) in [(2, 0), (3, 0), (4, 5)] {
                v.accept(access(id, bank, 32), SimTime(1));
            }
            let out = v.step(SimTime(1));
            assert_eq!(out.freed, moved, "{dispatch:?}");
            assert_eq!(v.bank_queue_len(0) + v.bank_queue_len(5) + out.started.len(), moved as usize);
        }
    }

    #[test]
    fn per_bank_fifo_and_conservation() {
        let cfg = VaultConfig::default();
        let mut v = Vault::new(0, cfg, SimTime::from_us(1));
        let mut now = SimTime::ZERO;
        let mut order = vec![];
        let mut pending: Vec<(SimTime, VaultAccess)> = vec![];
        for id in 0..20u32 {
            assert_eq!(v.accept(access(id, (id % 3) as u8, 64), now), Admission::Accepted);
        }
        while order.len() < 20 {
            let out = v.step(now);
            for s in out.started {
                pending.push((s.service.complete, s.access));
            }
            pending.sort_by_key(|p| (p.0, p.1.id));
            let (t, a) = pending.remove(0);
            now = t;
            v.retire(&a, now);
            order.push(a);
        }
        for bank in 0..3u8 {
            let ids: Vec<u32> = order.iter().filter(|a| a.bank == bank).map(|a| a.id).collect();
            assert!(ids.windows(2).all(|w| w[0] < w[1]), "bank {bank}: {ids:?}");
        }
        assert_eq!(v.counters.admitted, v.counters.completed);
    }
}
