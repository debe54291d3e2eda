//! External serialized links, quadrant switches, routing and the flow-control
//! primitives (channels, round-robin arbitration, credits).
//!
//! Topology: each link enters the switch of its home quadrant (link `l` ->
//! quadrant `l % 4`). A switch serves the four vaults of its quadrant and has
//! a direct channel to every other switch, so a request crosses at most two
//! switches. Transfers are store-and-forward at packet granularity.

use std::collections::VecDeque;

use thiserror::Error;

use crate::simkernel::SimTime;
use crate::stats::WindowCounter;

pub const QUADRANTS: u8 = 4;
pub const VAULTS_PER_QUADRANT: u8 = 4;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LinkError {
    #[error("invalid link configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinkConfig {
    pub links: u32,
    pub lanes_per_link: u32,
    /// Lane rate in Mb/s (10_000, 12_500 or 15_000).
    pub lane_rate_mbps: u32,
}

impl Default for LinkConfig {
    fn default() -> Self {
        LinkConfig { links: 2, lanes_per_link: 8, lane_rate_mbps: 15_000 }
    }
}

impl LinkConfig {
    pub fn validate(&self) -> Result<(), LinkError> {
        if self.links == 0 || self.lanes_per_link == 0 || self.lane_rate_mbps == 0 {
            return Err(LinkError::Config("links, lanes and rate must be positive".into()));
        }
        if self.links > u32::from(QUADRANTS) {
            return Err(LinkError::Config(format!("at most {QUADRANTS} links attach to one cube")));
        }
        Ok(())
    }

    /// One direction of one link, in bits per ns.
    fn bits_per_ns(&self) -> f64 {
        f64::from(self.lanes_per_link) * f64::from(self.lane_rate_mbps) / 1_000.0
    }

    /// Per-direction bandwidth of all links together, GB/s.
    pub fn per_direction_gbps(&self) -> f64 {
        f64::from(self.links) * self.bits_per_ns() / 8.0
    }

    /// Time to push `bytes` through one direction of one link, rounded up to
    /// a whole picosecond.
    pub fn serialize_bytes(&self, bytes: u64) -> SimTime {
        let denom = u64::from(self.lanes_per_link) * u64::from(self.lane_rate_mbps);
        SimTime((bytes * 8 * 1_000_000).div_ceil(denom))
    }

    pub fn serialize_flits(&self, flits: u32) -> SimTime {
        self.serialize_bytes(u64::from(flits) * 16)
    }
}

/// links x lanes x rate x 2 (full duplex) / 8, in GB/s.
pub fn peak_bandwidth(cfg: &LinkConfig) -> Result<f64, LinkError> {
    cfg.validate()?;
    Ok(cfg.per_direction_gbps() * 2.0)
}

/// Fabric latency and bandwidth knobs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InterconnectConfig {
    pub link: LinkConfig,
    /// Host controller + SerDes pipeline, charged once in each direction.
    pub host_pipeline: SimTime,
    /// Cube-side link layer (deserialize, buffer, decode), each direction.
    pub link_layer: SimTime,
    /// Routing latency of one switch traversal.
    pub hop_latency: SimTime,
    /// Per-flit transfer time on a switch-to-switch channel.
    pub noc_flit_time: SimTime,
}

impl Default for InterconnectConfig {
    fn default() -> Self {
        InterconnectConfig {
            link: LinkConfig::default(),
            host_pipeline: SimTime::from_ps(273_500),
            link_layer: SimTime::from_ns(30),
            hop_latency: SimTime::from_ns(2),
            noc_flit_time: SimTime::from_ps(800),
        }
    }
}

pub fn quadrant_of(vault: u8) -> u8 {
    vault / VAULTS_PER_QUADRANT
}

pub fn home_quadrant(link: u8) -> u8 {
    link % QUADRANTS
}

/// Switches visited between a link and a vault (same list reversed for the response).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Route {
    pub link: u8,
    pub home: u8,
    pub target: u8,
    pub vault: u8,
}

impl Route {
    pub fn hops(&self) -> u32 {
        if self.home == self.target {
            1
        } else {
            2
        }
    }
}

pub fn route(link: u8, vault: u8) -> Route {
    Route { link, home: home_quadrant(link), target: quadrant_of(vault), vault }
}

/// A unidirectional store-and-forward channel served in arrival order.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    busy_until: SimTime,
    pub busy_time: SimTime,
    pub packets: u64,
    pub bytes: u64,
    pub window: WindowCounter,
}

impl Channel {
    pub fn new(window: SimTime) -> Self {
        Channel {
            busy_until: SimTime::ZERO,
            busy_time: SimTime::ZERO,
            packets: 0,
            bytes: 0,
            window: WindowCounter::new(window),
        }
    }

    /// Occupies the channel for `duration` starting no earlier than `now`;
    /// returns the time the last bit leaves.
    pub fn reserve(&mut self, now: SimTime, duration: SimTime, bytes: u64) -> SimTime {
        let start = now.max(self.busy_until);
        let end = start + duration;
        self.busy_until = end;
        self.busy_time += duration;
        self.packets += 1;
        self.bytes += bytes;
        self.window.record_span(start, end, bytes);
        end
    }

    pub fn busy_until(&self) -> SimTime {
        self.busy_until
    }

    pub fn utilization(&self, span: SimTime) -> f64 {
        if span.0 == 0 {
            0.0
        } else {
            self.busy_time.0 as f64 / span.0 as f64
        }
    }
}

/// Round-robin selection across inputs; FIFO inside each input.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RoundRobin {
    next: usize,
}

impl RoundRobin {
    pub fn arbitrate<T>(&mut self, inputs: &mut [VecDeque<T>]) -> Option<(usize, T)> {
        let n = inputs.len();
        for k in 0..n {
            let i = (self.next + k) % n;
            if let Some(item) = inputs[i].pop_front() {
                self.next = (i + 1) % n;
                return Some((i, item));
            }
        }
        None
    }
}

/// Credits for one destination buffer: available + in flight = capacity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CreditCounter {
    capacity: u32,
    available: u32,
}

impl CreditCounter {
    pub fn new(capacity: u32) -> Self {
        CreditCounter { capacity, available: capacity }
    }

    pub fn try_take(&mut self) -> bool {
        if self.available == 0 {
            false
        } else {
            self.available -= 1;
            true
        }
    }

    pub fn give_back(&mut self) {
        assert!(self.available < self.capacity, "credit returned twice");
        self.available += 1;
    }

    pub fn available(&self) -> u32 {
        self.available
    }

    pub fn in_flight(&self) -> u32 {
        self.capacity - self.available
    }

    pub fn capacity(&self) -> u32 {
        self.capacity
    }
}
