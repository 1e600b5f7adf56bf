//! Wire messages exchanged between nodes.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::SimTime;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FlowId(pub u32);

impl fmt::Display for FlowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "f{}", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RouteError {
    #[error("route record is empty")]
    Empty,
    #[error("route record visits {0} twice")]
    Loop(NodeId),
}

/// An ordered simple path of nodes, beginning at the originator.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<NodeId>", into = "Vec<NodeId>")]
pub struct RouteRecord(Vec<NodeId>);

impl RouteRecord {
    pub fn new(hops: Vec<NodeId>) -> Result<Self, RouteError> {
        if hops.is_empty() {
            return Err(RouteError::Empty);
        }
        for (i, n) in hops.iter().enumerate() {
            if hops[..i].contains(n) {
                return Err(RouteError::Loop(*n));
            }
        }
        Ok(RouteRecord(hops))
    }

    pub fn starting_at(origin: NodeId) -> Self {
        RouteRecord(vec![origin])
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    /// Always false; a record holds at least its originator.
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Number of links traversed.
    pub fn hop_count(&self) -> usize {
        self.0.len() - 1
    }

    pub fn origin(&self) -> NodeId {
        self.0[0]
    }

    pub fn last(&self) -> NodeId {
        self.0[self.0.len() - 1]
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.0.contains(&node)
    }

    pub fn position(&self, node: NodeId) -> Option<usize> {
        self.0.iter().position(|&n| n == node)
    }

    pub fn get(&self, index: usize) -> Option<NodeId> {
        self.0.get(index).copied()
    }

    pub fn extended(&self, node: NodeId) -> Result<Self, RouteError> {
        if self.contains(node) {
            return Err(RouteError::Loop(node));
        }
        let mut hops = self.0.clone();
        hops.push(node);
        Ok(RouteRecord(hops))
    }

    /// Joins `self` with `tail`, where `tail` starts at `self.last()`.
    pub fn joined(&self, tail: &RouteRecord) -> Result<Self, RouteError> {
        let mut hops = self.0.clone();
        let skip = usize::from(tail.origin() == self.last());
        hops.extend_from_slice(&tail.0[skip..]);
        RouteRecord::new(hops)
    }

    /// True if `a` is immediately followed by `b` somewhere in the path.
    pub fn uses_link(&self, a: NodeId, b: NodeId) -> bool {
        self.0.windows(2).any(|w| w[0] == a && w[1] == b)
    }
}

impl TryFrom<Vec<NodeId>> for RouteRecord {
    type Error = RouteError;

    fn try_from(v: Vec<NodeId>) -> Result<Self, Self::Error> {
        RouteRecord::new(v)
    }
}

impl From<RouteRecord> for Vec<NodeId> {
    fn from(r: RouteRecord) -> Self {
        r.0
    }
}

impl fmt::Display for RouteRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, n) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("-")?;
            }
            write!(f, "{}", n.0)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rreq {
    pub origin: NodeId,
    pub target: NodeId,
    pub request_id: u32,
    pub record: RouteRecord,
}

/// Route reply travelling back toward `origin`. `cursor` is the index in
/// `route` of the node currently holding the packet.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rrep {
    pub origin: NodeId,
    pub target: NodeId,
    pub request_id: u32,
    pub route: RouteRecord,
    pub replier: NodeId,
    pub replier_claims_cached: bool,
    pub cursor: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataPacket {
    pub flow: FlowId,
    pub seq: u64,
    pub source_route: RouteRecord,
    pub cursor: usize,
    pub payload_size: u32,
    pub created_at: SimTime,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub probe_id: u64,
    pub route: RouteRecord,
    pub cursor: usize,
    pub issued_at: SimTime,
    pub timeout_at: SimTime,
}

/// Confirmation returned by a probe's destination along the reversed route.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeAck {
    pub probe_id: u64,
    pub route: RouteRecord,
    pub cursor: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuspicionAlert {
    pub accuser: NodeId,
    pub suspect: NodeId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Packet {
    Rreq(Rreq),
    Rrep(Rrep),
    Data(DataPacket),
    Probe(Probe),
    ProbeAck(ProbeAck),
    Alert(SuspicionAlert),
}

impl Packet {
    pub fn kind(&self) -> &'static str {
        match self {
            Packet::Rreq(_) => "rreq",
            Packet::Rrep(_) => "rrep",
            Packet::Data(_) => "data",
            Packet::Probe(_) => "probe",
            Packet::ProbeAck(_) => "probe-ack",
            Packet::Alert(_) => "alert",
        }
    }

    pub fn is_control(&self) -> bool {
        !matches!(self, Packet::Data(_))
    }

    /// The route the packet carries, if any.
    pub fn route(&self) -> Option<&RouteRecord> {
        match self {
            Packet::Rreq(p) => Some(&p.record),
            Packet::Rrep(p) => Some(&p.route),
            Packet::Data(p) => Some(&p.source_route),
            Packet::Probe(p) => Some(&p.route),
            Packet::ProbeAck(p) => Some(&p.route),
            Packet::Alert(_) => None,
        }
    }
}
