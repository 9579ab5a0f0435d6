//! Deterministic discrete-event engine.
//!
//! The clock is an integer nanosecond counter so that event ordering never
//! depends on floating-point rounding. Events sharing a timestamp run in the
//! order they were scheduled.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::fmt;
use std::ops::{Add, AddAssign, Sub};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("event scheduled in the past: fire_at={fire_at} < now={now}")]
    InPast { fire_at: SimTime, now: SimTime },
    #[error("rate must be positive and finite, got {0}")]
    InvalidRate(f64),
    #[error("standard deviation must be non-negative and finite, got {0}")]
    InvalidStdDev(f64),
}

/// A point in (or span of) simulated time, in integer nanoseconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_nanos(ns: u64) -> Self {
        SimTime(ns)
    }

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us * 1_000)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000_000)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * 1_000_000_000)
    }

    /// Rounds to the nearest nanosecond; negative and NaN inputs clamp to zero.
    pub fn from_micros_f64(us: f64) -> Self {
        Self::from_nanos_f64(us * 1e3)
    }

    pub fn from_secs_f64(s: f64) -> Self {
        Self::from_nanos_f64(s * 1e9)
    }

    fn from_nanos_f64(ns: f64) -> Self {
        if ns.is_nan() || ns <= 0.0 {
            SimTime(0)
        } else if ns >= u64::MAX as f64 {
            SimTime::MAX
        } else {
            SimTime(ns.round() as u64)
        }
    }

    pub const fn as_nanos(self) -> u64 {
        self.0
    }

    pub fn as_micros_f64(self) -> f64 {
        self.0 as f64 / 1e3
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e9
    }

    pub fn saturating_sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_add(rhs.0))
    }
}

impl AddAssign for SimTime {
    fn add_assign(&mut self, rhs: SimTime) {
        *self = *self + rhs;
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.checked_sub(rhs.0).expect("SimTime subtraction underflow"))
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3}us", self.as_micros_f64())
    }
}

/// Handle returned by [`Scheduler::schedule`]; identifies the event by its
/// sequence number.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct EventHandle(u64);

/// A queued event.
#[derive(Debug, Clone)]
pub struct SimEvent<E> {
    pub fire_at: SimTime,
    pub sequence: u64,
    pub action: E,
}

impl<E> PartialEq for SimEvent<E> {
    fn eq(&self, other: &Self) -> bool {
        self.fire_at == other.fire_at && self.sequence == other.sequence
    }
}

impl<E> Eq for SimEvent<E> {}

impl<E> PartialOrd for SimEvent<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for SimEvent<E> {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .fire_at
            .cmp(&self.fire_at)
            .then_with(|| other.sequence.cmp(&self.sequence))
    }
}

/// Single-threaded event scheduler parameterised over the event payload.
pub struct Scheduler<E> {
    now: SimTime,
    next_seq: u64,
    heap: BinaryHeap<SimEvent<E>>,
    cancelled: HashSet<u64>,
    executed: u64,
    trace: Option<Vec<(SimTime, u64)>>,
}

impl<E> Default for Scheduler<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> Scheduler<E> {
    pub fn new() -> Self {
        Scheduler {
            now: SimTime::ZERO,
            next_seq: 0,
            heap: BinaryHeap::new(),
            cancelled: HashSet::new(),
            executed: 0,
            trace: None,
        }
    }

    /// Records `(fire_at, sequence)` of every executed event.
    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn executed(&self) -> u64 {
        self.executed
    }

    pub fn trace(&self) -> Option<&[(SimTime, u64)]> {
        self.trace.as_deref()
    }

    pub fn schedule(&mut self, fire_at: SimTime, action: E) -> Result<EventHandle, SimError> {
        if fire_at < self.now {
            return Err(SimError::InPast { fire_at, now: self.now });
        }
        let sequence = self.next_seq;
        self.next_seq += 1;
        self.heap.push(SimEvent { fire_at, sequence, action });
        Ok(EventHandle(sequence))
    }

    /// Schedules relative to the current clock; cannot fail.
    pub fn schedule_in(&mut self, delay: SimTime, action: E) -> EventHandle {
        let at = self.now + delay;
        self.schedule(at, action).expect("relative schedule is never in the past")
    }

    /// Returns false if the event already ran or was already cancelled.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        if handle.0 >= self.next_seq {
            return false;
        }
        let live = self.heap.iter().any(|e| e.sequence == handle.0);
        live && self.cancelled.insert(handle.0)
    }

    /// Pops the next live event strictly before `end`, advancing the clock.
    pub fn pop_before(&mut self, end: SimTime) -> Option<(SimTime, E)> {
        loop {
            let top = self.heap.peek()?;
            if top.fire_at >= end {
                return None;
            }
            let ev = self.heap.pop().expect("peeked");
            if !self.cancelled.is_empty() && self.cancelled.remove(&ev.sequence) {
                continue;
            }
            debug_assert!(ev.fire_at >= self.now);
            self.now = ev.fire_at;
            self.executed += 1;
            if let Some(trace) = self.trace.as_mut() {
                trace.push((ev.fire_at, ev.sequence));
            }
            return Some((ev.fire_at, ev.action));
        }
    }

    /// Executes every event with `fire_at < end`, then sets the clock to `end`
    /// (or leaves it if already later).
    pub fn run_until<F>(&mut self, end: SimTime, mut handler: F) -> SimTime
    where
        F: FnMut(&mut Self, SimTime, E),
    {
        while let Some((at, ev)) = self.pop_before(end) {
            handler(self, at, ev);
        }
        if end > self.now {
            self.now = end;
        }
        self.now
    }

    /// Advances the clock to `end` without executing anything, for callers
    /// that drive [`Scheduler::pop_before`] themselves.
    pub fn advance_to(&mut self, end: SimTime) {
        if end > self.now {
            self.now = end;
        }
    }

    pub fn pending_len(&self) -> usize {
        self.heap.len() - self.cancelled.len()
    }

    /// Live (non-cancelled) pending events, in no particular order.
    pub fn pending(&self) -> impl Iterator<Item = &SimEvent<E>> {
        self.heap.iter().filter(move |e| !self.cancelled.contains(&e.sequence))
    }
}

/// A named, independently seeded random stream.
///
/// The generator seed is derived from `(seed, stream_id)` with a fixed mixing
/// function, so streams are stable across runs and platforms and adding a new
/// stream never shifts the draws of another.
#[derive(Clone, Debug)]
pub struct RandomStream {
    stream_id: String,
    seed: u64,
    rng: ChaCha8Rng,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RandomStream {
    pub fn new(seed: u64, stream_id: impl Into<String>) -> Self {
        let stream_id = stream_id.into();
        let derived = splitmix64(seed ^ splitmix64(fnv1a(stream_id.as_bytes())));
        RandomStream { rng: ChaCha8Rng::seed_from_u64(derived), stream_id, seed }
    }

    pub fn stream_id(&self) -> &str {
        &self.stream_id
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// One draw from Exp(rate); the result is in the reciprocal unit of `rate`.
    pub fn sample_exponential(&mut self, rate: f64) -> Result<f64, SimError> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(SimError::InvalidRate(rate));
        }
        let d = Exp::new(rate).map_err(|_| SimError::InvalidRate(rate))?;
        Ok(d.sample(&mut self.rng))
    }

    /// Exponential duration for a rate expressed in events per second.
    pub fn exp_duration(&mut self, rate_per_sec: f64) -> Result<SimTime, SimError> {
        self.sample_exponential(rate_per_sec).map(SimTime::from_secs_f64)
    }

    pub fn sample_gaussian(&mut self, mean: f64, stddev: f64) -> Result<f64, SimError> {
        if !(stddev >= 0.0 && stddev.is_finite()) {
            return Err(SimError::InvalidStdDev(stddev));
        }
        if stddev == 0.0 {
            return Ok(mean);
        }
        let d = Normal::new(mean, stddev).map_err(|_| SimError::InvalidStdDev(stddev))?;
        Ok(d.sample(&mut self.rng))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }
}
