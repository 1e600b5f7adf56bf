//! Probe bookkeeping for one candidate route: three sequential test packets,
//! each resolved by a confirmation or a timeout before the next is issued.

use std::time::Duration;

pub const PROBES_PER_ROUTE: u8 = 3;

/// `per_hop × hops`, never below `floor`.
pub fn probe_timeout(hop_count: u32, per_hop: Duration, floor: Duration) -> Duration {
    (per_hop * hop_count).max(floor)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProbeStep {
    /// Issue the next probe.
    Next,
    /// All probes resolved.
    Done { successes: u8, failures: u8 },
    /// The id did not match the outstanding probe; nothing changed.
    Ignored,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ProbeSession {
    successes: u8,
    failures: u8,
    outstanding: Option<u64>,
}

impl ProbeSession {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn successes(&self) -> u8 {
        self.successes
    }

    pub fn failures(&self) -> u8 {
        self.failures
    }

    pub fn outstanding(&self) -> Option<u64> {
        self.outstanding
    }

    pub fn is_done(&self) -> bool {
        self.successes + self.failures >= PROBES_PER_ROUTE
    }

    /// Registers `probe_id` as in flight.
    pub fn issue(&mut self, probe_id: u64) {
        debug_assert!(self.outstanding.is_none() && !self.is_done());
        self.outstanding = Some(probe_id);
    }

    pub fn on_ack(&mut self, probe_id: u64) -> ProbeStep {
        self.resolve(probe_id, true)
    }

    pub fn on_timeout(&mut self, probe_id: u64) -> ProbeStep {
        self.resolve(probe_id, false)
    }

    fn resolve(&mut self, probe_id: u64, ok: bool) -> ProbeStep {
        if self.outstanding != Some(probe_id) {
            return ProbeStep::Ignored;
        }
        self.outstanding = None;
        if ok {
            self.successes += 1;
        } else {
            self.failures += 1;
        }
        if self.is_done() {
            ProbeStep::Done {
                successes: self.successes,
                failures: self.failures,
            }
        } else {
            ProbeStep::Next
        }
    }
}
