//! Reply collection at the origin: a per-replier arrival log for reply-rate
//! counting, and the windowed candidate set for one discovery.

use std::collections::{BTreeMap, VecDeque};
use std::time::Duration;

use crate::defense::scoring::RouteCandidate;
use crate::packet::{NodeId, Rrep};
use crate::sim::SimTime;

/// Arrival times of every reply received, per replier.
#[derive(Clone, Debug, Default)]
pub struct ReplyLog {
    arrivals: BTreeMap<NodeId, VecDeque<SimTime>>,
}

impl ReplyLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, replier: NodeId, at: SimTime) {
        self.arrivals.entry(replier).or_default().push_back(at);
    }

    /// Replies from `replier` in the half-open interval `(at - window, at]`.
    pub fn count(&self, replier: NodeId, at: SimTime, window: Duration) -> u32 {
        let Some(times) = self.arrivals.get(&replier) else {
            return 0;
        };
        let start = at.saturating_sub(window);
        let excl_start = at.as_micros() >= window.as_micros() as u64;
        times
            .iter()
            .filter(|&&t| t <= at && (if excl_start { t > start } else { t >= start }))
            .count() as u32
    }

    /// Forgets arrivals at or before `before`.
    pub fn prune(&mut self, before: SimTime) {
        for q in self.arrivals.values_mut() {
            while q.front().is_some_and(|&t| t <= before) {
                q.pop_front();
            }
        }
        self.arrivals.retain(|_, q| !q.is_empty());
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Offer {
    Added,
    Merged,
    /// Arrived after the window closed.
    Late,
}

/// Candidates gathered for one discovery, from the first reply until
/// `first_at + window`.
#[derive(Clone, Debug)]
pub struct CandidateSet {
    pub first_at: SimTime,
    pub closes_at: SimTime,
    pub candidates: Vec<RouteCandidate>,
}

impl CandidateSet {
    pub fn open(first_at: SimTime, window: Duration) -> Self {
        CandidateSet {
            first_at,
            closes_at: first_at + window,
            candidates: Vec::new(),
        }
    }

    pub fn offer(&mut self, rrep: &Rrep, iterations: u32, at: SimTime) -> Offer {
        if at > self.closes_at {
            return Offer::Late;
        }
        if self.candidates.iter().any(|c| c.route == rrep.route) {
            return Offer::Merged;
        }
        self.candidates
            .push(RouteCandidate::new(rrep.route.clone(), rrep.replier, iterations));
        Offer::Added
    }
}

/// Collects a time-ordered stream of `(arrival, reply)` for one discovery,
/// logging every reply and opening the window at the first one.
pub fn collect_rreps(arrivals: &[(SimTime, Rrep)], window: Duration, iteration_window: Duration, log: &mut ReplyLog) -> Vec<RouteCandidate> {
    let mut set: Option<CandidateSet> = None;
    for (at, rrep) in arrivals {
        log.record(rrep.replier, *at);
        let iterations = log.count(rrep.replier, *at, iteration_window);
        set.get_or_insert_with(|| CandidateSet::open(*at, window))
            .offer(rrep, iterations, *at);
    }
    set.map(|s| s.candidates).unwrap_or_default()
}
