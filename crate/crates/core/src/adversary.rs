//! Black-hole behavior: answer every overheard route request with a forged
//! one-hop-to-target reply, then swallow whatever is routed through.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::dsr::reply_for;
use crate::packet::{NodeId, Rrep, Rreq};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackMode {
    Single,
    #[default]
    Cooperative,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackerConfig {
    pub attacker_ids: BTreeSet<NodeId>,
    pub reply_delay: Duration,
    pub mode: AttackMode,
}

impl AttackerConfig {
    pub fn is_attacker(&self, node: NodeId) -> bool {
        self.attacker_ids.contains(&node)
    }
}

/// Forged reply: the overheard record, then the attacker, then the target,
/// claiming the attacker is adjacent to the target. Returns `None` when the
/// attacker is itself the target or already on the record.
pub fn forge_rrep(attacker: NodeId, rreq: &Rreq) -> Option<Rrep> {
    if attacker == rreq.target {
        return None;
    }
    let route = rreq.record.extended(attacker).ok()?.extended(rreq.target).ok()?;
    Some(reply_for(rreq, route, attacker, false))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SinkCount {
    pub data: u64,
    pub probe: u64,
}

/// Per-attacker tally of swallowed packets.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SinkCounter {
    counts: BTreeMap<NodeId, SinkCount>,
}

impl SinkCounter {
    pub fn new(attackers: &BTreeSet<NodeId>) -> Self {
        SinkCounter {
            counts: attackers.iter().map(|&a| (a, SinkCount::default())).collect(),
        }
    }

    pub fn sink_data(&mut self, attacker: NodeId) {
        self.counts.entry(attacker).or_default().data += 1;
    }

    pub fn sink_probe(&mut self, attacker: NodeId) {
        self.counts.entry(attacker).or_default().probe += 1;
    }

    pub fn get(&self, attacker: NodeId) -> SinkCount {
        self.counts.get(&attacker).copied().unwrap_or_default()
    }

    pub fn total_data(&self) -> u64 {
        self.counts.values().map(|c| c.data).sum()
    }

    pub fn total_probe(&self) -> u64 {
        self.counts.values().map(|c| c.probe).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, SinkCount)> + '_ {
        self.counts.iter().map(|(&n, &c)| (n, c))
    }
}
