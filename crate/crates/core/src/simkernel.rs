//! Discrete-event kernel: a global picosecond clock and a (time, seq) ordered
//! event queue. The kernel owns no model state.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::io::Write;

use thiserror::Error;

/// Simulated time in picoseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_ps(ps: u64) -> Self {
        SimTime(ps)
    }

    pub const fn from_ns(ns: u64) -> Self {
        SimTime(ns * 1_000)
    }

    pub const fn from_us(us: u64) -> Self {
        SimTime(us * 1_000_000)
    }

    pub const fn ps(self) -> u64 {
        self.0
    }

    pub fn as_ns(self) -> f64 {
        self.0 as f64 / 1_000.0
    }

    pub fn saturating_sub(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(other.0))
    }
}

impl std::ops::Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl std::ops::AddAssign for SimTime {
    fn add_assign(&mut self, rhs: SimTime) {
        self.0 += rhs.0;
    }
}

impl std::ops::Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ps", self.0)
    }
}

/// Identifies the model component an event is addressed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ComponentId(pub u32);

/// Short label used by the dispatch trace.
pub trait EventKind {
    fn kind(&self) -> &'static str;
}

#[derive(Debug, Clone)]
pub struct SimEvent<T> {
    pub time: SimTime,
    pub seq: u64,
    pub target: ComponentId,
    pub payload: T,
}

// Heap entries are ordered by (time, seq) only; reversed for a min-heap.
impl<T> PartialEq for SimEvent<T> {
    fn eq(&self, other: &Self) -> bool {
        self.time == other.time && self.seq == other.seq
    }
}
impl<T> Eq for SimEvent<T> {}
impl<T> PartialOrd for SimEvent<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<T> Ord for SimEvent<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KernelError {
    #[error("event scheduled in the past: t={requested} < clock={now}")]
    InPast { requested: SimTime, now: SimTime },
}

/// Pending events keyed by (time, seq).
pub struct EventQueue<T> {
    heap: BinaryHeap<SimEvent<T>>,
}

impl<T> Default for EventQueue<T> {
    fn default() -> Self {
        Self { heap: BinaryHeap::new() }
    }
}

impl<T> EventQueue<T> {
    pub fn push(&mut self, ev: SimEvent<T>) {
        self.heap.push(ev);
    }

    pub fn pop(&mut self) -> Option<SimEvent<T>> {
        self.heap.pop()
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|e| e.time)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

/// The engine: clock + queue + insertion counter, with an optional dispatch trace.
pub struct Engine<T> {
    now: SimTime,
    next_seq: u64,
    queue: EventQueue<T>,
    dispatched: u64,
    trace: Option<Box<dyn Write>>,
}

impl<T> Default for Engine<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T> Engine<T> {
    pub fn new() -> Self {
        Self {
            now: SimTime::ZERO,
            next_seq: 0,
            queue: EventQueue::default(),
            dispatched: 0,
            trace: None,
        }
    }

    /// Emit `tick,seq,target,kind` for every dispatched event.
    pub fn with_trace(mut self, sink: Box<dyn Write>) -> Self {
        self.trace = Some(sink);
        self
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn dispatched(&self) -> u64 {
        self.dispatched
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn schedule(&mut self, time: SimTime, target: ComponentId, payload: T) -> Result<u64, KernelError> {
        if time < self.now {
            return Err(KernelError::InPast { requested: time, now: self.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(SimEvent { time, seq, target, payload });
        Ok(seq)
    }

    /// Schedules `delay` after the current clock. Cannot fail.
    pub fn schedule_in(&mut self, delay: SimTime, target: ComponentId, payload: T) -> u64 {
        let t = self.now + delay;
        self.schedule(t, target, payload).expect("relative schedule is never in the past")
    }

    /// Pops the next event with `time <= limit`, advancing the clock to it.
    pub fn next_until(&mut self, limit: SimTime) -> Option<SimEvent<T>>
    where
        T: EventKind,
    {
        match self.queue.peek_time() {
            Some(t) if t <= limit => {
                let ev = self.queue.pop()?;
                self.now = ev.time;
                self.dispatched += 1;
                if let Some(sink) = self.trace.as_mut() {
                    // Trace output is best effort.
                    let _ = writeln!(sink, "{},{},{},{}", ev.time.0, ev.seq, ev.target.0, ev.payload.kind());
                }
                Some(ev)
            }
            _ => None,
        }
    }

    /// Dispatches until the queue is empty; the clock stays at the last event.
    pub fn run_to_completion<F>(&mut self, handler: F) -> SimTime
    where
        T: EventKind,
        F: FnMut(&mut Self, SimEvent<T>),
    {
        self.run_inner(SimTime::MAX, handler)
    }

    fn run_inner<F>(&mut self, limit: SimTime, mut handler: F) -> SimTime
    where
        T: EventKind,
        F: FnMut(&mut Self, SimEvent<T>),
    {
        while let Some(ev) = self.next_until(limit) {
            handler(self, ev);
        }
        if let Some(sink) = self.trace.as_mut() {
            let _ = sink.flush();
        }
        self.now
    }

    /// Dispatches every event with `time <= limit` in (time, seq) order and
    /// returns the final clock, which is `limit` once the queue is drained up to it.
    pub fn run_until<F>(&mut self, limit: SimTime, handler: F) -> SimTime
    where
        T: EventKind,
        F: FnMut(&mut Self, SimEvent<T>),
    {
        self.run_inner(limit, handler);
        if self.now < limit {
            self.now = limit;
        }
        self.now
    }
}
