//! Deterministic discrete-event machinery.
//!
//! A trial owns one [`Scheduler`] and a handful of named [`RngStream`]s.
//! Events are ordered by `(fire_at, seq)`, so two events scheduled for the
//! same tick pop in insertion order and a run is a pure function of its
//! configuration and seed.

mod trial;

pub use trial::{
    run_trial, run_trial_with, Delivery, ErrorTallies, Payload, TrialError, TrialOptions,
    TrialOutput, TrialResult,
};

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::fmt;
use std::ops::{Add, Sub};

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Simulated time in integer nanoseconds since trial start.
#[derive(
    Copy, Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_ns(ns: u64) -> Self {
        SimTime(ns)
    }

    pub const fn from_us(us: u64) -> Self {
        SimTime(us * 1_000)
    }

    pub const fn from_ms(ms: u64) -> Self {
        SimTime(ms * 1_000_000)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * 1_000_000_000)
    }

    /// Rounds to the nearest nanosecond; negative and NaN inputs clamp to zero.
    pub fn from_secs_f64(s: f64) -> Self {
        if !(s > 0.0) {
            return SimTime::ZERO;
        }
        SimTime((s * 1e9).round() as u64)
    }

    pub const fn as_ns(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 * 1e-9
    }

    pub fn saturating_sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
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
        write!(f, "{}ns", self.0)
    }
}

/// Node address. Node 0 and node 1 are the link endpoints.
pub type NodeId = u16;

/// Which simulated component an event is addressed to.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Target {
    Node(NodeId),
    Bsa,
    Trial,
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Node(n) => write!(f, "node{n}"),
            Target::Bsa => f.write_str("bsa"),
            Target::Trial => f.write_str("trial"),
        }
    }
}

/// Implemented by event payload enums so the trace log can name them.
pub trait PayloadKind {
    fn kind(&self) -> &'static str;
}

#[derive(Clone, Debug, PartialEq)]
pub struct Event<P> {
    pub fire_at: SimTime,
    pub seq: u64,
    pub target: Target,
    pub payload: P,
}

impl<P> PartialEq for Queued<P> {
    fn eq(&self, other: &Self) -> bool {
        self.0.fire_at == other.0.fire_at && self.0.seq == other.0.seq
    }
}
impl<P> Eq for Queued<P> {}
impl<P> PartialOrd for Queued<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<P> Ord for Queued<P> {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.0.fire_at, self.0.seq).cmp(&(other.0.fire_at, other.0.seq))
    }
}

struct Queued<P>(Event<P>);

/// Raised when a trial exceeds its event budget.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("event cap of {cap} exceeded at {now} (protocol livelock?)")]
pub struct EventCapExceeded {
    pub cap: u64,
    pub now: SimTime,
}

/// Events processed before a trial is aborted.
pub const DEFAULT_EVENT_CAP: u64 = 1_000_000_000;

/// Global clock plus a min-queue of pending events.
pub struct Scheduler<P> {
    now: SimTime,
    next_seq: u64,
    processed: u64,
    event_cap: u64,
    queue: BinaryHeap<Reverse<Queued<P>>>,
    trace: Option<Vec<String>>,
}

impl<P: PayloadKind> Scheduler<P> {
    pub const DEFAULT_EVENT_CAP: u64 = DEFAULT_EVENT_CAP;

    pub fn new(event_cap: u64) -> Self {
        Self {
            now: SimTime::ZERO,
            next_seq: 0,
            processed: 0,
            event_cap,
            queue: BinaryHeap::new(),
            trace: None,
        }
    }

    /// Record one line per processed event (`time_ns target kind`).
    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    pub fn trace(&self) -> Option<&[String]> {
        self.trace.as_deref()
    }

    pub fn take_trace(&mut self) -> Option<Vec<String>> {
        self.trace.take()
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn processed(&self) -> u64 {
        self.processed
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    /// Enqueue `payload` for `target` at `fire_at` and return its sequence number.
    ///
    /// Panics if `fire_at` lies before the current clock.
    pub fn schedule(&mut self, fire_at: SimTime, target: Target, payload: P) -> u64 {
        assert!(
            fire_at >= self.now,
            "event scheduled in the past: {fire_at} < {}",
            self.now
        );
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse(Queued(Event {
            fire_at,
            seq,
            target,
            payload,
        })));
        seq
    }

    pub fn schedule_in(&mut self, delay: SimTime, target: Target, payload: P) -> u64 {
        self.schedule(self.now + delay, target, payload)
    }

    /// Pop the earliest event and advance the clock to it.
    pub fn pop(&mut self) -> Result<Option<Event<P>>, EventCapExceeded> {
        let Some(Reverse(Queued(event))) = self.queue.pop() else {
            return Ok(None);
        };
        if self.processed >= self.event_cap {
            return Err(EventCapExceeded {
                cap: self.event_cap,
                now: self.now,
            });
        }
        debug_assert!(event.fire_at >= self.now);
        self.now = event.fire_at;
        self.processed += 1;
        if let Some(trace) = self.trace.as_mut() {
            trace.push(format!(
                "{} {} {}",
                event.fire_at.as_ns(),
                event.target,
                event.payload.kind()
            ));
        }
        Ok(Some(event))
    }
}

/// A named, independently seeded random stream.
///
/// The ChaCha8 state is derived from SHA-256 of `(trial_seed, stream_id)`,
/// which makes draws identical across runs and platforms.
#[derive(Clone, Debug)]
pub struct RngStream {
    id: String,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(trial_seed: u64, stream_id: &str) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(b"qlink-rng-stream/v1");
        hasher.update(trial_seed.to_le_bytes());
        hasher.update((stream_id.len() as u64).to_le_bytes());
        hasher.update(stream_id.as_bytes());
        let digest = hasher.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest[..32]);
        Self {
            id: stream_id.to_owned(),
            rng: ChaCha8Rng::from_seed(seed),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Number of failures before the first success of a Bernoulli(`p`) process.
///
/// Returns `None` when `p` is zero (no success ever).
pub fn sample_geometric<R: rand::Rng + ?Sized>(p: f64, rng: &mut R) -> Option<u64> {
    if p <= 0.0 {
        return None;
    }
    if p >= 1.0 {
        return Some(0);
    }
    // 1 - U lies in (0, 1], so the logarithm is finite.
    let u: f64 = 1.0 - rng.random::<f64>();
    let k = (u.ln() / (-p).ln_1p()).floor();
    if k >= u64::MAX as f64 {
        Some(u64::MAX)
    } else {
        Some(k as u64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[derive(Debug, Clone, PartialEq)]
    struct Tag(&'static str);
    impl PayloadKind for Tag {
        fn kind(&self) -> &'static str {
            self.0
        }
    }

    #[test]
    fn ties_pop_in_insertion_order() {
        let mut s = Scheduler::new(100);
        s.schedule(SimTime(5), Target::Bsa, Tag("a"));
        s.schedule(SimTime(5), Target::Bsa, Tag("b"));
        s.schedule(SimTime(3), Target::Bsa, Tag("c"));
        let order: Vec<_> = std::iter::from_fn(|| s.pop().unwrap())
            .map(|e| (e.fire_at.0, e.payload.0))
            .collect();
        assert_eq!(order, vec![(3, "c"), (5, "a"), (5, "b")]);
    }

    #[test]
    fn single_event_at_zero() {
        let mut s = Scheduler::new(10);
        s.schedule(SimTime::ZERO, Target::Trial, Tag("x"));
        let e = s.pop().unwrap().unwrap();
        assert_eq!(e.fire_at, SimTime::ZERO);
        assert_eq!(s.now(), SimTime::ZERO);
        assert!(s.pop().unwrap().is_none());
    }

    #[test]
    #[should_panic(expected = "in the past")]
    fn scheduling_in_the_past_panics() {
        let mut s = Scheduler::new(10);
        s.schedule(SimTime(10), Target::Trial, Tag("x"));
        s.pop().unwrap();
        s.schedule(SimTime(9), Target::Trial, Tag("y"));
    }

    #[test]
    fn event_cap_aborts() {
        let mut s = Scheduler::new(2);
        for t in 0..3 {
            s.schedule(SimTime(t), Target::Trial, Tag("x"));
        }
        assert!(s.pop().unwrap().is_some());
        assert!(s.pop().unwrap().is_some());
        assert!(s.pop().is_err());
    }

    #[test]
    fn trace_lines() {
        let mut s = Scheduler::new(10);
        s.enable_trace();
        s.schedule(SimTime(7), Target::Node(1), Tag("Ping"));
        s.pop().unwrap();
        assert_eq!(s.trace().unwrap(), &["7 node1 Ping".to_string()]);
    }

    #[test]
    fn streams_are_reproducible_and_independent() {
        let mut a = RngStream::new(42, "memory");
        let mut b = RngStream::new(42, "memory");
        let xs: Vec<u64> = (0..16).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..16).map(|_| b.next_u64()).collect();
        assert_eq!(xs, ys);

        let mut other = RngStream::new(42, "channel");
        let mut other_again = RngStream::new(42, "channel");
        for _ in 0..1000 {
            a.next_u64();
        }
        assert_eq!(other.next_u64(), other_again.next_u64());
        assert_ne!(RngStream::new(43, "memory").next_u64(), xs[0]);
    }

    #[test]
    fn geometric_mean_matches() {
        let mut rng = RngStream::new(1, "geo");
        let p = 0.1;
        let n = 200_000;
        let sum: u64 = (0..n).map(|_| sample_geometric(p, &mut rng).unwrap()).sum();
        let mean = sum as f64 / n as f64;
        // mean (1-p)/p = 9, variance (1-p)/p^2 = 90
        let se = (90.0f64 / n as f64).sqrt();
        assert!((mean - 9.0).abs() < 4.0 * se, "mean {mean}");
        assert_eq!(sample_geometric(0.0, &mut rng), None);
        assert_eq!(sample_geometric(1.0, &mut rng), Some(0));
        let _: f64 = rng.random();
    }

    #[test]
    fn secs_roundtrip() {
        assert_eq!(SimTime::from_secs_f64(1.5e-6), SimTime(1500));
        assert_eq!(SimTime::from_secs_f64(-1.0), SimTime::ZERO);
        assert!((SimTime::from_ms(50).as_secs_f64() - 0.05).abs() < 1e-15);
    }
}
