//! Per-node suspicion table. Direct detection isolates immediately; hearsay
//! (neighbor alerts, detector verdicts) needs a second independent source.
//! Isolation is permanent for the run.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::packet::NodeId;
use crate::sim::SimTime;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Evidence {
    /// Own probes found the suspect's route fully infected.
    Direct,
    /// One-hop alert from a neighbor.
    Alert { accuser: NodeId },
    /// Non-self verdict from the local detector set.
    Detector,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuspicionEntry {
    pub suspicion_count: u32,
    pub first_seen: SimTime,
    pub isolated: bool,
    pub direct: bool,
    #[serde(skip)]
    accusers: BTreeSet<NodeId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Thresholds {
    pub direct: u32,
    pub hearsay: u32,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { direct: 1, hearsay: 2 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Outcome {
    /// The evidence was counted.
    pub counted: bool,
    /// This piece of evidence flipped the suspect to isolated.
    pub newly_isolated: bool,
    /// First direct detection of this suspect; the caller should alert.
    pub first_direct: bool,
}

#[derive(Clone, Debug)]
pub struct SuspicionTable {
    owner: NodeId,
    thresholds: Thresholds,
    entries: BTreeMap<NodeId, SuspicionEntry>,
}

impl SuspicionTable {
    pub fn new(owner: NodeId, thresholds: Thresholds) -> Self {
        SuspicionTable {
            owner,
            thresholds,
            entries: BTreeMap::new(),
        }
    }

    pub fn is_isolated(&self, node: NodeId) -> bool {
        self.entries.get(&node).is_some_and(|e| e.isolated)
    }

    pub fn entry(&self, node: NodeId) -> Option<&SuspicionEntry> {
        self.entries.get(&node)
    }

    pub fn isolated(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.entries.iter().filter(|(_, e)| e.isolated).map(|(&n, _)| n)
    }

    /// Adds one unit of suspicion. Self-accusation and repeat alerts from the
    /// same accuser are ignored.
    pub fn accuse(&mut self, suspect: NodeId, evidence: Evidence, now: SimTime) -> Outcome {
        if suspect == self.owner {
            return Outcome::default();
        }
        if let Evidence::Alert { accuser } = evidence {
            if accuser == suspect {
                return Outcome::default();
            }
        }
        let e = self.entries.entry(suspect).or_insert_with(|| SuspicionEntry {
            suspicion_count: 0,
            first_seen: now,
            isolated: false,
            direct: false,
            accusers: BTreeSet::new(),
        });
        let mut out = Outcome::default();
        match evidence {
            Evidence::Alert { accuser } => {
                if !e.accusers.insert(accuser) {
                    return out;
                }
            }
            Evidence::Direct => {
                out.first_direct = !e.direct;
                e.direct = true;
            }
            Evidence::Detector => {}
        }
        out.counted = true;
        e.suspicion_count += 1;
        let threshold = if e.direct {
            self.thresholds.direct
        } else {
            self.thresholds.hearsay
        };
        if !e.isolated && e.suspicion_count >= threshold {
            e.isolated = true;
            out.newly_isolated = true;
        }
        out
    }
}
