//! Discrete-event core: a millisecond virtual clock, an ordered event queue
//! and labeled, seeded random streams.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};
use std::fmt;
use std::ops::{Add, Sub};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Simulation time in whole milliseconds since scenario start.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * 1000)
    }

    /// Rounds to the nearest millisecond. Negative and NaN inputs map to zero.
    pub fn from_secs_f64(s: f64) -> Self {
        if !(s > 0.0) {
            return SimTime(0);
        }
        SimTime((s * 1000.0).round() as u64)
    }

    pub const fn as_millis(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1000.0
    }

    pub fn saturating_sub(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(other.0))
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:03}s", self.0 / 1000, self.0 % 1000)
    }
}

struct Entry<E> {
    time: SimTime,
    seq: u64,
    event: E,
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        self.time == other.time && self.seq == other.seq
    }
}

impl<E> Eq for Entry<E> {}

impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Entry<E> {
    // BinaryHeap is a max-heap; invert so the earliest (time, seq) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.cmp(&self.time).then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Future event list ordered by `(fire_time, insertion sequence)`.
pub struct EventQueue<E> {
    heap: BinaryHeap<Entry<E>>,
    now: SimTime,
    next_seq: u64,
    scheduled: u64,
    processed: u64,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            now: SimTime::ZERO,
            next_seq: 0,
            scheduled: 0,
            processed: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Enqueue `event` at `at`.
    ///
    /// Scheduling into the past is a programming error and panics.
    pub fn schedule(&mut self, at: SimTime, event: E) {
        assert!(
            at >= self.now,
            "event scheduled in the past: fire_time {at} < clock {}",
            self.now
        );
        let seq = self.next_seq;
        self.next_seq += 1;
        self.scheduled += 1;
        self.heap.push(Entry { time: at, seq, event });
    }

    /// Pop the next event with `fire_time <= end`, advancing the clock to it.
    pub fn pop_until(&mut self, end: SimTime) -> Option<(SimTime, E)> {
        match self.heap.peek() {
            Some(top) if top.time <= end => {
                let entry = self.heap.pop().expect("peeked");
                debug_assert!(entry.time >= self.now);
                self.now = entry.time;
                self.processed += 1;
                Some((entry.time, entry.event))
            }
            _ => None,
        }
    }

    /// Move the clock forward to `end` once no events at or before it remain.
    pub fn advance_to(&mut self, end: SimTime) {
        if end > self.now {
            self.now = end;
        }
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn processed(&self) -> u64 {
        self.processed
    }

    pub fn scheduled(&self) -> u64 {
        self.scheduled
    }

    /// Number of still-pending events with `fire_time <= end`.
    pub fn pending_until(&self, end: SimTime) -> usize {
        self.heap.iter().filter(|e| e.time <= end).count()
    }
}

/// Counters returned by [`run_until`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunSummary {
    pub end: SimTime,
    pub events_processed: u64,
    pub events_scheduled: u64,
}

/// Drain every event with `fire_time <= end` through `handler`, then set the
/// clock to `end`. The handler may schedule further events.
pub fn run_until<E, F>(queue: &mut EventQueue<E>, end: SimTime, mut handler: F) -> RunSummary
where
    F: FnMut(&mut EventQueue<E>, SimTime, E),
{
    while let Some((t, ev)) = queue.pop_until(end) {
        handler(queue, t, ev);
    }
    queue.advance_to(end);
    RunSummary {
        end: queue.now(),
        events_processed: queue.processed(),
        events_scheduled: queue.scheduled(),
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Deterministic substream for `(label, seed)`; independent of any other label.
pub fn rng_stream(label: &str, seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(fnv1a(label) ^ splitmix64(seed)))
}

/// Per-run registry that hands out each labeled stream at most once.
#[derive(Debug)]
pub struct RngStreams {
    seed: u64,
    taken: BTreeSet<String>,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        RngStreams {
            seed,
            taken: BTreeSet::new(),
        }
    }

    /// Panics if `label` was already registered in this run.
    pub fn stream(&mut self, label: &str) -> ChaCha8Rng {
        assert!(
            self.taken.insert(label.to_string()),
            "random stream {label:?} registered twice"
        );
        rng_stream(label, self.seed)
    }
}
