//! Deterministic discrete-event kernel.
//!
//! Time is kept as integer microsecond ticks so that the queue key
//! `(fire_at, seq)` is a total order with no floating point involved.
//! All randomness is drawn from named streams whose state is derived from
//! `(global seed, stream name)`; adding a consumer never perturbs the others.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashSet};
use std::fmt;
use std::ops::{Add, Sub};

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ids::EntityId;

const TICKS_PER_MS: u64 = 1_000;

/// Simulation time in microsecond ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms * TICKS_PER_MS)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * 1_000 * TICKS_PER_MS)
    }

    /// Rounds a non-negative millisecond span to the nearest tick.
    pub fn from_ms_f64(ms: f64) -> Self {
        debug_assert!(ms.is_finite() && ms >= 0.0, "invalid span {ms}");
        SimTime((ms.max(0.0) * TICKS_PER_MS as f64).round() as u64)
    }

    pub const fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_ms_f64(self) -> f64 {
        self.0 as f64 / TICKS_PER_MS as f64
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
        write!(f, "{}ms", self.as_ms_f64())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EventHandle(u64);

#[derive(Debug, Clone, PartialEq)]
pub struct SimEvent<P> {
    pub fire_at: SimTime,
    pub seq: u64,
    pub target: EntityId,
    pub payload: P,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct KernelStats {
    pub events_processed: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KernelError {
    #[error("event scheduled in the past: fire_at={fire_at} < now={now}")]
    ScheduledInPast { fire_at: SimTime, now: SimTime },
}

struct Queued<P>(SimEvent<P>);

impl<P> PartialEq for Queued<P> {
    fn eq(&self, other: &Self) -> bool {
        self.0.seq == other.0.seq
    }
}

impl<P> Eq for Queued<P> {}

impl<P> PartialOrd for Queued<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Queued<P> {
    // Reversed: BinaryHeap is a max-heap and we want the earliest key on top.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.0.fire_at, other.0.seq).cmp(&(self.0.fire_at, self.0.seq))
    }
}

/// A named, independently seeded random stream.
#[derive(Debug, Clone)]
pub struct RngStream {
    name: String,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, name: &str) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(seed.to_le_bytes());
        hasher.update(name.as_bytes());
        let digest = hasher.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest[..32]);
        RngStream {
            name: name.to_owned(),
            rng: ChaCha8Rng::from_seed(key),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}

/// Lazily created streams keyed by name.
#[derive(Debug, Clone)]
pub struct RngStreams {
    seed: u64,
    streams: BTreeMap<String, RngStream>,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        RngStreams {
            seed,
            streams: BTreeMap::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&mut self, name: &str) -> &mut RngStream {
        let seed = self.seed;
        self.streams
            .entry(name.to_owned())
            .or_insert_with(|| RngStream::new(seed, name))
    }
}

pub struct Kernel<P> {
    now: SimTime,
    next_seq: u64,
    queue: BinaryHeap<Queued<P>>,
    pending: HashSet<u64>,
    cancelled: HashSet<u64>,
    rngs: RngStreams,
    stats: KernelStats,
}

impl<P> Kernel<P> {
    pub fn new(seed: u64) -> Self {
        Kernel {
            now: SimTime::ZERO,
            next_seq: 0,
            queue: BinaryHeap::new(),
            pending: HashSet::new(),
            cancelled: HashSet::new(),
            rngs: RngStreams::new(seed),
            stats: KernelStats::default(),
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn stats(&self) -> KernelStats {
        self.stats
    }

    pub fn pending_events(&self) -> usize {
        self.pending.len()
    }

    pub fn rng(&mut self, name: &str) -> &mut RngStream {
        self.rngs.stream(name)
    }

    pub fn schedule(
        &mut self,
        fire_at: SimTime,
        target: EntityId,
        payload: P,
    ) -> Result<EventHandle, KernelError> {
        if fire_at < self.now {
            return Err(KernelError::ScheduledInPast {
                fire_at,
                now: self.now,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.pending.insert(seq);
        self.queue.push(Queued(SimEvent {
            fire_at,
            seq,
            target,
            payload,
        }));
        Ok(EventHandle(seq))
    }

    /// Schedules `delay` after the current clock; never fails.
    pub fn schedule_in(&mut self, delay: SimTime, target: EntityId, payload: P) -> EventHandle {
        let at = self.now + delay;
        self.schedule(at, target, payload)
            .expect("relative schedule is never in the past")
    }

    /// Cancelling an already fired or cancelled handle is a no-op.
    pub fn cancel(&mut self, handle: EventHandle) {
        if self.pending.remove(&handle.0) {
            self.cancelled.insert(handle.0);
        }
    }

    /// Pops the next live event with `fire_at <= end`, advancing the clock to it.
    pub fn next_event(&mut self, end: SimTime) -> Option<SimEvent<P>> {
        loop {
            let head = self.queue.peek()?;
            if self.cancelled.contains(&head.0.seq) {
                let Queued(ev) = self.queue.pop().expect("peeked");
                self.cancelled.remove(&ev.seq);
                continue;
            }
            if head.0.fire_at > end {
                return None;
            }
            let Queued(ev) = self.queue.pop().expect("peeked");
            self.pending.remove(&ev.seq);
            self.now = ev.fire_at;
            self.stats.events_processed += 1;
            return Some(ev);
        }
    }

    /// Moves the clock forward to `t` without processing anything.
    pub fn advance_to(&mut self, t: SimTime) {
        if t > self.now {
            self.now = t;
        }
    }

    pub fn run_until<F>(&mut self, end: SimTime, mut handler: F) -> KernelStats
    where
        F: FnMut(&mut Self, SimEvent<P>),
    {
        let before = self.stats.events_processed;
        while let Some(ev) = self.next_event(end) {
            handler(self, ev);
        }
        self.advance_to(end);
        KernelStats {
            events_processed: self.stats.events_processed - before,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::NodeId;
    use proptest::prelude::*;
    use rand::Rng;

    fn target() -> EntityId {
        EntityId::Node(NodeId(0))
    }

    #[test]
    fn schedule_fires_at_requested_time() {
        let mut k = Kernel::new(1);
        k.advance_to(SimTime::from_millis(3));
        k.schedule(SimTime::from_millis(5), target(), "a").unwrap();
        let ev = k.next_event(SimTime::from_millis(10)).unwrap();
        assert_eq!(ev.fire_at, SimTime::from_millis(5));
        assert_eq!(k.now(), SimTime::from_millis(5));
    }

    #[test]
    fn equal_times_are_fifo() {
        let mut k = Kernel::new(1);
        k.schedule(SimTime::from_millis(5), target(), "A").unwrap();
        k.schedule(SimTime::from_millis(5), target(), "B").unwrap();
        let mut seen = Vec::new();
        k.run_until(SimTime::from_millis(5), |_, ev| seen.push(ev.payload));
        assert_eq!(seen, vec!["A", "B"]);
    }

    #[test]
    fn scheduling_in_the_past_is_an_error() {
        let mut k: Kernel<()> = Kernel::new(1);
        k.advance_to(SimTime::from_millis(3));
        let err = k.schedule(SimTime::from_millis(2), target(), ()).unwrap_err();
        assert_eq!(
            err,
            KernelError::ScheduledInPast {
                fire_at: SimTime::from_millis(2),
                now: SimTime::from_millis(3)
            }
        );
    }

    #[test]
    fn empty_queue_runs_to_end() {
        let mut k: Kernel<()> = Kernel::new(1);
        let stats = k.run_until(SimTime::from_millis(600_000), |_, _| {});
        assert_eq!(stats.events_processed, 0);
        assert_eq!(k.now(), SimTime::from_millis(600_000));
    }

    #[test]
    fn run_until_stops_at_end() {
        let mut k = Kernel::new(1);
        for t in 1..=3 {
            k.schedule(SimTime::from_millis(t), target(), t).unwrap();
        }
        let stats = k.run_until(SimTime::from_millis(2), |_, _| {});
        assert_eq!(stats.events_processed, 2);
        assert_eq!(k.now(), SimTime::from_millis(2));
        assert_eq!(k.pending_events(), 1);
    }

    #[test]
    fn self_rescheduling_every_second_fires_600_times() {
        // Loop oracle: firings at 1000, 2000, ..., <= 600_000.
        let mut expected = 0;
        let mut t = 1_000;
        while t <= 600_000 {
            expected += 1;
            t += 1_000;
        }
        assert_eq!(expected, 600);

        let mut k = Kernel::new(1);
        k.schedule(SimTime::from_millis(1_000), target(), ()).unwrap();
        let mut fired = 0;
        k.run_until(SimTime::from_millis(600_000), |k, ev| {
            fired += 1;
            k.schedule_in(SimTime::from_millis(1_000), ev.target, ());
        });
        assert_eq!(fired, expected);
    }

    #[test]
    fn cancelled_events_do_not_fire_and_double_cancel_is_noop() {
        let mut k = Kernel::new(1);
        let h = k.schedule(SimTime::from_millis(1), target(), 1).unwrap();
        k.schedule(SimTime::from_millis(2), target(), 2).unwrap();
        k.cancel(h);
        k.cancel(h);
        let mut seen = Vec::new();
        k.run_until(SimTime::from_millis(10), |_, ev| seen.push(ev.payload));
        assert_eq!(seen, vec![2]);
        // Cancelling a fired handle does nothing either.
        let h3 = k.schedule(SimTime::from_millis(11), target(), 3).unwrap();
        k.run_until(SimTime::from_millis(11), |_, _| {});
        k.cancel(h3);
        assert_eq!(k.pending_events(), 0);
    }

    #[test]
    fn same_name_same_lineage() {
        let mut streams = RngStreams::new(1);
        let a: u64 = streams.stream("slots").gen();
        let b: u64 = streams.stream("slots").gen();
        let mut fresh = RngStream::new(1, "slots");
        assert_eq!(a, fresh.gen::<u64>());
        assert_eq!(b, fresh.gen::<u64>());
    }

    #[test]
    fn seeds_and_names_separate_streams() {
        let draw = |seed, name| {
            let mut s = RngStream::new(seed, name);
            (0..16).map(|_| s.gen::<u64>()).collect::<Vec<_>>()
        };
        assert_ne!(draw(1, "slots"), draw(2, "slots"));
        assert_ne!(draw(1, "a"), draw(1, "b"));
    }

    #[test]
    fn distinct_streams_look_independent() {
        // Pearson correlation over 10^4 paired uniform draws should be near 0;
        // for independent streams its std is 1/sqrt(n) = 0.01.
        let mut a = RngStream::new(1, "a");
        let mut b = RngStream::new(1, "b");
        let n = 10_000;
        let xs: Vec<f64> = (0..n).map(|_| a.gen::<f64>()).collect();
        let ys: Vec<f64> = (0..n).map(|_| b.gen::<f64>()).collect();
        let mx = xs.iter().sum::<f64>() / n as f64;
        let my = ys.iter().sum::<f64>() / n as f64;
        let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
        let r = cov / (vx * vy).sqrt();
        assert!(r.abs() < 0.04, "correlation {r}");
    }

    #[test]
    fn from_ms_rounds_to_ticks() {
        assert_eq!(SimTime::from_ms_f64(0.0876).as_micros(), 88);
        assert_eq!(SimTime::from_millis(5).as_ms_f64(), 5.0);
    }

    proptest! {
        #[test]
        fn processing_order_matches_sort_oracle(times in prop::collection::vec(0u64..50, 1..200)) {
            let mut k = Kernel::new(7);
            for (i, t) in times.iter().enumerate() {
                k.schedule(SimTime::from_millis(*t), target(), i).unwrap();
            }
            let mut oracle: Vec<(u64, usize)> = times.iter().copied().zip(0..).collect();
            oracle.sort();
            let mut seen = Vec::new();
            let mut last = SimTime::ZERO;
            k.run_until(SimTime::from_millis(100), |k, ev| {
                assert!(k.now() >= last);
                last = k.now();
                seen.push((ev.fire_at.as_micros() / 1_000, ev.payload));
            });
            prop_assert_eq!(seen, oracle);
        }
    }
}
