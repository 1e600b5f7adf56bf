//! Discrete-event engine.
//!
//! Events are ordered by `(fire_at, seq)`: equal timestamps fire in insertion
//! order. Time is integral microseconds so ordering never depends on floating
//! point rounding.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::fmt;
use std::ops::{Add, Sub};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Simulation timestamp in whole microseconds since the start of the run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000)
    }

    /// Rounds to the nearest microsecond. Negative and NaN inputs clamp to zero.
    pub fn from_secs_f64(secs: f64) -> Self {
        SimTime((secs.max(0.0) * 1e6).round() as u64)
    }

    pub const fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn as_millis_f64(self) -> f64 {
        self.0 as f64 / 1e3
    }

    pub fn saturating_sub(self, rhs: Duration) -> SimTime {
        SimTime(self.0.saturating_sub(duration_micros(rhs)))
    }

    /// Elapsed time from `earlier` to `self`, zero if `earlier` is later.
    pub fn since(self, earlier: SimTime) -> Duration {
        Duration::from_micros(self.0.saturating_sub(earlier.0))
    }
}

fn duration_micros(d: Duration) -> u64 {
    u64::try_from(d.as_micros()).unwrap_or(u64::MAX)
}

impl Add<Duration> for SimTime {
    type Output = SimTime;

    fn add(self, rhs: Duration) -> SimTime {
        SimTime(self.0.saturating_add(duration_micros(rhs)))
    }
}

impl Sub for SimTime {
    type Output = Duration;

    fn sub(self, rhs: SimTime) -> Duration {
        self.since(rhs)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:06}s", self.0 / 1_000_000, self.0 % 1_000_000)
    }
}

/// Converts fractional seconds to a `Duration` at microsecond resolution.
pub fn secs(s: f64) -> Duration {
    SimTime::from_secs_f64(s) - SimTime::ZERO
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("cannot schedule event at {at} before current clock {now}")]
    InPast { at: SimTime, now: SimTime },
    #[error("cannot run until {end}: clock already at {now}")]
    EndInPast { end: SimTime, now: SimTime },
    #[error("handler fault in event seq={seq} ({kind}) at {at}: {detail}")]
    HandlerFault {
        seq: u64,
        at: SimTime,
        kind: String,
        detail: String,
    },
}

/// Identifies a scheduled event for cancellation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct EventHandle(u64);

impl EventHandle {
    pub fn seq(self) -> u64 {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event<E> {
    pub fire_at: SimTime,
    pub seq: u64,
    pub payload: E,
}

/// Payloads name their kind for traces and fault diagnostics.
pub trait EventKind {
    fn kind(&self) -> &'static str;
}

pub struct Engine<E> {
    now: SimTime,
    next_seq: u64,
    queue: BinaryHeap<Reverse<(SimTime, u64)>>,
    payloads: HashMap<u64, E>,
}

impl<E> Default for Engine<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> Engine<E> {
    pub fn new() -> Self {
        Engine {
            now: SimTime::ZERO,
            next_seq: 0,
            queue: BinaryHeap::new(),
            payloads: HashMap::new(),
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Number of live (not cancelled, not yet fired) events.
    pub fn pending(&self) -> usize {
        self.payloads.len()
    }

    pub fn schedule(&mut self, fire_at: SimTime, payload: E) -> Result<EventHandle, SimError> {
        if fire_at < self.now {
            return Err(SimError::InPast {
                at: fire_at,
                now: self.now,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse((fire_at, seq)));
        self.payloads.insert(seq, payload);
        Ok(EventHandle(seq))
    }

    pub fn schedule_in(&mut self, delay: Duration, payload: E) -> EventHandle {
        let at = self.now + delay;
        self.schedule(at, payload)
            .expect("relative scheduling is never in the past")
    }

    /// Returns true if the event was still pending.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        self.payloads.remove(&handle.0).is_some()
    }

    /// Pops the next live event with `fire_at <= end`, advancing the clock to it.
    pub fn pop_due(&mut self, end: SimTime) -> Option<Event<E>> {
        while let Some(&Reverse((fire_at, seq))) = self.queue.peek() {
            if fire_at > end {
                return None;
            }
            self.queue.pop();
            if let Some(payload) = self.payloads.remove(&seq) {
                debug_assert!(fire_at >= self.now);
                self.now = fire_at;
                return Some(Event {
                    fire_at,
                    seq,
                    payload,
                });
            }
        }
        None
    }

    /// Moves the clock forward to `t`; never backwards.
    pub fn advance_to(&mut self, t: SimTime) {
        if t > self.now {
            self.now = t;
        }
    }

    /// Processes every event with `fire_at <= end` in `(fire_at, seq)` order and
    /// leaves the clock at `end`. A handler error aborts the run.
    pub fn run_until<F>(&mut self, end: SimTime, mut handler: F) -> Result<usize, SimError>
    where
        E: EventKind,
        F: FnMut(&mut Engine<E>, &Event<E>) -> Result<(), String>,
    {
        if end < self.now {
            return Err(SimError::EndInPast { end, now: self.now });
        }
        let mut processed = 0;
        while let Some(event) = self.pop_due(end) {
            handler(self, &event).map_err(|detail| SimError::HandlerFault {
                seq: event.seq,
                at: event.fire_at,
                kind: event.payload.kind().to_string(),
                detail,
            })?;
            processed += 1;
        }
        self.advance_to(end);
        Ok(processed)
    }
}
