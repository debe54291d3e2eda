//! Reductions shared by the experiments: summaries, histograms, windowed
//! bandwidth, Little's-law estimates and the analytic queue-latency model.

use thiserror::Error;

use crate::protocol::{Command, FLIT_BYTES};
use crate::simkernel::SimTime;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("invalid input: {0}")]
    Invalid(String),
}

/// N = λ W.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LittleEstimate {
    /// requests per ns
    pub arrival_rate: f64,
    /// ns
    pub mean_sojourn: f64,
    pub outstanding: f64,
}

pub fn little(arrival_rate: f64, mean_sojourn: f64) -> Result<LittleEstimate, StatsError> {
    if !(arrival_rate > 0.0 && mean_sojourn > 0.0) {
        return Err(StatsError::Invalid(format!(
            "arrival rate {arrival_rate} and sojourn {mean_sojourn} must be positive"
        )));
    }
    Ok(LittleEstimate {
        arrival_rate,
        mean_sojourn,
        outstanding: arrival_rate * mean_sojourn,
    })
}

/// A queue of `depth` requests in front of a server with fixed service time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueueModel {
    pub service_ns: f64,
    pub depth: u32,
}

/// Mean latency of `depth` simultaneous arrivals at a FIFO server:
/// request i completes after i services, so the mean is S (n + 1) / 2.
pub fn queue_avg_latency(q: &QueueModel) -> Result<f64, StatsError> {
    if q.service_ns.is_nan() || q.service_ns <= 0.0 || q.depth == 0 {
        return Err(StatsError::Invalid("service time must be positive and depth >= 1".into()));
    }
    Ok(q.service_ns * (f64::from(q.depth) + 1.0) / 2.0)
}

/// Bytes moved in each direction over a window.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BandwidthSample {
    pub window_ns: f64,
    pub request_dir_bytes: u64,
    pub response_dir_bytes: u64,
}

impl BandwidthSample {
    /// Accumulates `count` accesses of one kind using full packet sizes
    /// (head, tail and payload).
    pub fn add_accesses(&mut self, cmd: Command, size: u32, count: u64) {
        let (req, resp) = access_bytes(cmd, size);
        self.request_dir_bytes += req * count;
        self.response_dir_bytes += resp * count;
    }

    /// (request direction, response direction) in GB/s. Zero window gives zeros.
    pub fn gbps(&self) -> (f64, f64) {
        if self.window_ns <= 0.0 {
            return (0.0, 0.0);
        }
        (
            self.request_dir_bytes as f64 / self.window_ns,
            self.response_dir_bytes as f64 / self.window_ns,
        )
    }

    pub fn total_gbps(&self) -> f64 {
        let (a, b) = self.gbps();
        a + b
    }
}

/// Request and response packet bytes for one access, overhead flit included.
pub fn access_bytes(cmd: Command, size: u32) -> (u64, u64) {
    let flit = FLIT_BYTES as u64;
    match cmd {
        Command::Read => (flit, u64::from(size) + flit),
        Command::Write => (u64::from(size) + flit, flit),
    }
}

/// Population summary of a sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub stddev: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    /// `None` for an empty sample.
    pub fn of(xs: &[f64]) -> Option<Summary> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Some(Summary {
            count: xs.len(),
            mean,
            stddev: var.sqrt(),
            min: xs.iter().copied().fold(f64::INFINITY, f64::min),
            max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

/// Fixed-width histogram. Bin `i` covers `[origin + i*width, origin + (i+1)*width)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub origin: f64,
    pub width: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(origin: f64, width: f64) -> Self {
        assert!(width > 0.0, "histogram width must be positive");
        Histogram { origin, width, counts: Vec::new() }
    }

    /// Bins spanning `[min, max]` of the sample, origin aligned down to `width`.
    pub fn of(xs: &[f64], width: f64) -> Histogram {
        let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let origin = if min.is_finite() { (min / width).floor() * width } else { 0.0 };
        let mut h = Histogram::new(origin, width);
        for &x in xs {
            h.add(x);
        }
        h
    }

    pub fn add(&mut self, x: f64) {
        let idx = ((x - self.origin) / self.width).floor().max(0.0) as usize;
        if idx >= self.counts.len() {
            self.counts.resize(idx + 1, 0);
        }
        self.counts[idx] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn bin_start(&self, i: usize) -> f64 {
        self.origin + i as f64 * self.width
    }
}

/// Least-squares line through the points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some(LinearFit { slope, intercept, r2 })
}

/// Occupancy/sojourn instrumentation of a queue for Little's-law checks.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QueueProbe {
    occupancy: u64,
    last_change: SimTime,
    /// ps x items
    area: u128,
    pub arrivals: u64,
    pub departures: u64,
    /// ps, over departed items
    total_sojourn: u128,
    pub max_occupancy: u64,
}

/// Time-average occupancy next to the λW it should equal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LittleCheck {
    pub mean_occupancy: f64,
    pub arrival_rate: f64,
    pub mean_sojourn_ns: f64,
    pub samples: u64,
}

impl LittleCheck {
    pub fn lambda_w(&self) -> f64 {
        self.arrival_rate * self.mean_sojourn_ns
    }

    /// |L - λW| / λW, or 0 when nothing passed through.
    pub fn relative_error(&self) -> f64 {
        let lw = self.lambda_w();
        if lw == 0.0 {
            return 0.0;
        }
        (self.mean_occupancy - lw).abs() / lw
    }
}

impl QueueProbe {
    fn advance(&mut self, now: SimTime) {
        self.area += u128::from(self.occupancy) * u128::from(now.0 - self.last_change.0);
        self.last_change = now;
    }

    pub fn enter(&mut self, now: SimTime) {
        self.advance(now);
        self.occupancy += 1;
        self.arrivals += 1;
        self.max_occupancy = self.max_occupancy.max(self.occupancy);
    }

    pub fn leave(&mut self, now: SimTime, entered: SimTime) {
        self.advance(now);
        debug_assert!(self.occupancy > 0, "leave from an empty queue");
        self.occupancy -= 1;
        self.departures += 1;
        self.total_sojourn += u128::from(now.0 - entered.0);
    }

    pub fn occupancy(&self) -> u64 {
        self.occupancy
    }

    /// Measures over `[0, end]`.
    pub fn check(&self, end: SimTime) -> LittleCheck {
        let mut p = self.clone();
        p.advance(end.max(p.last_change));
        let span = end.0.max(1) as f64;
        LittleCheck {
            mean_occupancy: p.area as f64 / span,
            arrival_rate: p.departures as f64 / span * 1_000.0,
            mean_sojourn_ns: if p.departures == 0 {
                0.0
            } else {
                p.total_sojourn as f64 / p.departures as f64 / 1_000.0
            },
            samples: p.departures,
        }
    }

    pub fn mean_sojourn_ns(&self) -> f64 {
        if self.departures == 0 {
            0.0
        } else {
            self.total_sojourn as f64 / self.departures as f64 / 1_000.0
        }
    }
}

/// Bytes per fixed window; tracks the busiest window. A transfer recorded as
/// a span is spread pro rata over the windows it overlaps.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowCounter {
    window: SimTime,
    current: u64,
    current_bytes: f64,
    pub max_window_bytes: f64,
    pub total_bytes: u64,
}

impl WindowCounter {
    pub fn new(window: SimTime) -> Self {
        assert!(window.0 > 0, "window must be positive");
        WindowCounter {
            window,
            current: 0,
            current_bytes: 0.0,
            max_window_bytes: 0.0,
            total_bytes: 0,
        }
    }

    fn add(&mut self, w: u64, bytes: f64) {
        if w > self.current {
            self.current = w;
            self.current_bytes = 0.0;
        }
        self.current_bytes += bytes;
        self.max_window_bytes = self.max_window_bytes.max(self.current_bytes);
    }

    /// Records `bytes` delivered at `now`; callers must pass non-decreasing times.
    pub fn record(&mut self, now: SimTime, bytes: u64) {
        self.total_bytes += bytes;
        self.add(now.0 / self.window.0, bytes as f64);
    }

    /// Records `bytes` moved uniformly over `[start, end)`. Spans must not
    /// start before the previous one ended.
    pub fn record_span(&mut self, start: SimTime, end: SimTime, bytes: u64) {
        if end <= start {
            self.record(end, bytes);
            return;
        }
        self.total_bytes += bytes;
        let rate = bytes as f64 / (end.0 - start.0) as f64;
        let w = self.window.0;
        let mut t = start.0;
        while t < end.0 {
            let k = t / w;
            let stop = ((k + 1) * w).min(end.0);
            self.add(k, (stop - t) as f64 * rate);
            t = stop;
        }
    }

    pub fn window(&self) -> SimTime {
        self.window
    }

    /// Peak windowed rate in GB/s.
    pub fn peak_gbps(&self) -> f64 {
        self.max_window_bytes / (self.window.0 as f64 / 1_000.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn little_products() {
        assert!((little(0.01, 2000.0).unwrap().outstanding - 20.0).abs() < 1e-9);
        assert!((little(0.1, 2880.0).unwrap().outstanding - 288.0).abs() < 1e-9);
        assert!(little(0.0, 100.0).is_err());
        assert!(little(0.1, -1.0).is_err());
    }

    // Oracle: simulate n simultaneous arrivals at a FIFO server.
    fn fifo_mean(service: f64, n: u32) -> f64 {
        let mut free = 0.0;
        let mut total = 0.0;
        for _ in 0..n {
            free += service;
            total += free;
        }
        total / f64::from(n)
    }

    #[test]
    fn queue_latency_closed_form() {
        assert_eq!(queue_avg_latency(&QueueModel { service_ns: 10.0, depth: 1 }).unwrap(), 10.0);
        assert_eq!(queue_avg_latency(&QueueModel { service_ns: 10.0, depth: 9 }).unwrap(), 50.0);
        for n in 1..400 {
            for s in [0.5, 3.2, 10.0, 41.0] {
                let q = QueueModel { service_ns: s, depth: n };
                assert!((queue_avg_latency(&q).unwrap() - fifo_mean(s, n)).abs() < 1e-9 * fifo_mean(s, n));
            }
        }
        let ys: Vec<f64> = (1..=100).map(|n| queue_avg_latency(&QueueModel { service_ns: 7.0, depth: n }).unwrap()).collect();
        let xs: Vec<f64> = (1..=100).map(f64::from).collect();
        let fit = linear_fit(&xs, &ys).unwrap();
        assert!((fit.slope - 3.5).abs() < 1e-9 && fit.r2 > 0.999_999);
        assert!(queue_avg_latency(&QueueModel { service_ns: 0.0, depth: 3 }).is_err());
    }

    #[test]
    fn bandwidth_accounting() {
        let mut s = BandwidthSample { window_ns: 4.8e6, ..Default::default() };
        s.add_accesses(Command::Read, 128, 1_000_000);
        let (req, resp) = s.gbps();
        assert!((resp - 30.0).abs() < 1e-9);
        assert!((req - 16.0 / 4.8).abs() < 1e-9);
        assert_eq!(BandwidthSample { window_ns: 1.0, ..Default::default() }.gbps(), (0.0, 0.0));
        assert_eq!(access_bytes(Command::Write, 64), (80, 16));
    }

    #[test]
    fn summaries() {
        let s = Summary::of(&[5.0, 5.0, 5.0]).unwrap();
        assert_eq!((s.mean, s.stddev), (5.0, 0.0));
        let s = Summary::of(&[0.0, 10.0]).unwrap();
        assert_eq!((s.mean, s.stddev, s.min, s.max), (5.0, 5.0, 0.0, 10.0));
        assert!(Summary::of(&[]).is_none());
    }

    #[test]
    fn histogram_partitions_range() {
        let xs = [700.0, 701.0, 715.9, 716.0, 750.0];
        let h = Histogram::of(&xs, 16.0);
        assert_eq!(h.origin, 688.0);
        assert_eq!(h.total(), 5);
        assert_eq!(h.counts, vec![2, 2, 0, 1]);
        assert!(h.bin_start(h.counts.len() - 1) <= 750.0);
    }

    #[test]
    fn probe_occupancy_and_sojourn() {
        let mut p = QueueProbe::default();
        p.enter(SimTime::from_ns(0));
        p.enter(SimTime::from_ns(10));
        p.leave(SimTime::from_ns(20), SimTime::from_ns(0));
        p.leave(SimTime::from_ns(40), SimTime::from_ns(10));
        let c = p.check(SimTime::from_ns(40));
        // area = 10*1 + 10*2 + 20*1 = 50 item-ns over 40 ns
        assert!((c.mean_occupancy - 1.25).abs() < 1e-12);
        assert!((c.lambda_w() - 1.25).abs() < 1e-12);
        assert_eq!(c.relative_error(), 0.0);
        assert_eq!(p.max_occupancy, 2);
    }

    #[test]
    fn window_counter_peak() {
        let mut w = WindowCounter::new(SimTime::from_us(1));
        w.record(SimTime::from_ns(10), 100);
        w.record(SimTime::from_ns(999), 100);
        w.record(SimTime::from_ns(1000), 50);
        assert_eq!(w.max_window_bytes, 200.0);
        assert!((w.peak_gbps() - 0.2).abs() < 1e-12);
        assert_eq!(w.total_bytes, 250);
    }

    #[test]
    fn window_counter_spreads_spans() {
        let mut w = WindowCounter::new(SimTime::from_ns(10));
        // 40 bytes over [5, 25) ns: 10 + 20 + 10
        w.record_span(SimTime::from_ns(5), SimTime::from_ns(25), 40);
        assert!((w.max_window_bytes - 20.0).abs() < 1e-9);
        assert_eq!(w.total_bytes, 40);
        // back-to-back spans at a steady rate never exceed rate x window
        let mut w = WindowCounter::new(SimTime::from_us(1));
        let mut t = SimTime(0);
        for _ in 0..1000 {
            let end = t + SimTime(12_800);
            w.record_span(t, end, 128);
            t = end;
        }
        assert!(w.peak_gbps() <= 10.0 + 1e-9);
        assert!(w.peak_gbps() > 9.99);
    }
}
