//! Honest-node source routing: discovery by flooding, replies, route cache and
//! the send buffer used while a discovery is outstanding.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use thiserror::Error;

use crate::packet::{DataPacket, NodeId, RouteRecord, Rrep, Rreq};
use crate::sim::SimTime;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DsrError {
    #[error("{0} cannot discover a route to itself")]
    SelfDiscovery(NodeId),
    #[error("cached route {route} does not start at cache owner {owner}")]
    ForeignRoute { owner: NodeId, route: RouteRecord },
}

#[derive(Clone, Debug, PartialEq)]
pub struct CachedRoute {
    pub route: RouteRecord,
    pub inserted_at: SimTime,
}

/// Routes known by one node, keyed by destination.
#[derive(Clone, Debug)]
pub struct RouteCache {
    owner: NodeId,
    routes: BTreeMap<NodeId, Vec<CachedRoute>>,
}

impl RouteCache {
    pub fn new(owner: NodeId) -> Self {
        RouteCache {
            owner,
            routes: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, route: RouteRecord, now: SimTime) -> Result<(), DsrError> {
        if route.origin() != self.owner || route.len() < 2 {
            return Err(DsrError::ForeignRoute {
                owner: self.owner,
                route,
            });
        }
        let entry = self.routes.entry(route.last()).or_default();
        entry.retain(|c| c.route != route);
        entry.push(CachedRoute {
            route,
            inserted_at: now,
        });
        Ok(())
    }

    /// Most recently learned route to `dest`.
    pub fn lookup(&self, dest: NodeId) -> Option<&RouteRecord> {
        self.routes.get(&dest)?.last().map(|c| &c.route)
    }

    pub fn routes_to(&self, dest: NodeId) -> &[CachedRoute] {
        self.routes.get(&dest).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn remove_dest(&mut self, dest: NodeId) {
        self.routes.remove(&dest);
    }

    /// Drops every route that traverses `a -> b`; returns how many were removed.
    pub fn invalidate_link(&mut self, a: NodeId, b: NodeId) -> usize {
        self.invalidate_where(|r| r.uses_link(a, b))
    }

    pub fn invalidate_node(&mut self, node: NodeId) -> usize {
        self.invalidate_where(|r| r.contains(node))
    }

    fn invalidate_where(&mut self, bad: impl Fn(&RouteRecord) -> bool) -> usize {
        let mut removed = 0;
        for list in self.routes.values_mut() {
            let before = list.len();
            list.retain(|c| !bad(&c.route));
            removed += before - list.len();
        }
        self.routes.retain(|_, l| !l.is_empty());
        removed
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum RreqAction {
    /// Already seen, or this node is already in the record.
    Drop,
    /// Send a reply toward the origin.
    Reply(Rrep),
    /// Append self and flood onward.
    Rebroadcast(Rreq),
}

/// Builds the reply a node at `route[replier_index]` sends back.
pub fn reply_for(rreq: &Rreq, route: RouteRecord, replier: NodeId, claims_cached: bool) -> Rrep {
    let cursor = route.position(replier).expect("replier is on the route");
    Rrep {
        origin: rreq.origin,
        target: rreq.target,
        request_id: rreq.request_id,
        route,
        replier,
        replier_claims_cached: claims_cached,
        cursor,
    }
}

/// Honest route-request processing. `cache` is consulted only when cached
/// replies are enabled.
pub fn handle_rreq(
    node: NodeId,
    rreq: &Rreq,
    seen: &mut BTreeSet<(NodeId, u32)>,
    cache: Option<&RouteCache>,
) -> RreqAction {
    if rreq.record.contains(node) || !seen.insert((rreq.origin, rreq.request_id)) {
        return RreqAction::Drop;
    }
    let Ok(here) = rreq.record.extended(node) else {
        return RreqAction::Drop;
    };
    if node == rreq.target {
        return RreqAction::Reply(reply_for(rreq, here, node, false));
    }
    if let Some(tail) = cache.and_then(|c| c.lookup(rreq.target)) {
        if let Ok(full) = rreq.record.joined(tail) {
            return RreqAction::Reply(reply_for(rreq, full, node, true));
        }
    }
    RreqAction::Rebroadcast(Rreq {
        record: here,
        ..rreq.clone()
    })
}

/// Next node an in-flight reply should be handed to, or `None` at the origin.
pub fn rrep_next_hop(rrep: &Rrep) -> Option<NodeId> {
    rrep.cursor.checked_sub(1).and_then(|i| rrep.route.get(i))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DiscoveryPhase {
    /// Flooded; no reply yet.
    AwaitingReply,
    /// Defense mode: gathering replies until the window closes.
    Collecting,
    /// Defense mode: probing candidates.
    Probing,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PendingDiscovery {
    pub target: NodeId,
    pub request_id: u32,
    /// 0 for the first flood, incremented per retry.
    pub attempt: u32,
    pub started_at: SimTime,
    pub phase: DiscoveryPhase,
}

/// Outstanding discoveries at one node, at most one per target.
#[derive(Clone, Debug)]
pub struct DiscoveryTable {
    owner: NodeId,
    next_request_id: u32,
    pending: BTreeMap<NodeId, PendingDiscovery>,
}

impl DiscoveryTable {
    pub fn new(owner: NodeId) -> Self {
        DiscoveryTable {
            owner,
            next_request_id: 1,
            pending: BTreeMap::new(),
        }
    }

    fn flood(&mut self, target: NodeId, attempt: u32, now: SimTime) -> Rreq {
        let request_id = self.next_request_id;
        self.next_request_id += 1;
        self.pending.insert(
            target,
            PendingDiscovery {
                target,
                request_id,
                attempt,
                started_at: now,
                phase: DiscoveryPhase::AwaitingReply,
            },
        );
        Rreq {
            origin: self.owner,
            target,
            request_id,
            record: RouteRecord::starting_at(self.owner),
        }
    }

    /// Opens a discovery. Returns `Ok(None)` when one is already pending for
    /// `target` (coalesced, nothing to flood).
    pub fn start(&mut self, target: NodeId, now: SimTime) -> Result<Option<Rreq>, DsrError> {
        if target == self.owner {
            return Err(DsrError::SelfDiscovery(target));
        }
        if self.pending.contains_key(&target) {
            return Ok(None);
        }
        Ok(Some(self.flood(target, 0, now)))
    }

    /// Re-floods with a fresh request id if fewer than `max_retries` retries
    /// have been made; otherwise closes the discovery and returns `None`.
    pub fn retry(&mut self, target: NodeId, max_retries: u32, now: SimTime) -> Option<Rreq> {
        let prev = self.pending.remove(&target)?;
        if prev.attempt >= max_retries {
            return None;
        }
        Some(self.flood(target, prev.attempt + 1, now))
    }

    pub fn get(&self, target: NodeId) -> Option<&PendingDiscovery> {
        self.pending.get(&target)
    }

    /// The pending discovery matching `(target, request_id)`.
    pub fn matching(&mut self, target: NodeId, request_id: u32) -> Option<&mut PendingDiscovery> {
        self.pending
            .get_mut(&target)
            .filter(|p| p.request_id == request_id)
    }

    pub fn close(&mut self, target: NodeId) -> Option<PendingDiscovery> {
        self.pending.remove(&target)
    }

    pub fn is_pending(&self, target: NodeId) -> bool {
        self.pending.contains_key(&target)
    }
}

/// Baseline reply handling: the first reply for a pending discovery wins and
/// closes it; anything else is ignored.
pub fn handle_rrep_plain(table: &mut DiscoveryTable, rrep: &Rrep) -> Option<RouteRecord> {
    let pending = table.matching(rrep.target, rrep.request_id)?;
    if pending.phase != DiscoveryPhase::AwaitingReply {
        return None;
    }
    table.close(rrep.target);
    Some(rrep.route.clone())
}

/// Packets waiting for a route, bounded across all destinations.
#[derive(Clone, Debug)]
pub struct SendBuffer {
    limit: usize,
    len: usize,
    queues: BTreeMap<NodeId, VecDeque<DataPacket>>,
}

impl SendBuffer {
    pub fn new(limit: usize) -> Self {
        SendBuffer {
            limit,
            len: 0,
            queues: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Hands the packet back when the buffer is full.
    pub fn push(&mut self, dest: NodeId, pkt: DataPacket) -> Result<(), DataPacket> {
        if self.len >= self.limit {
            return Err(pkt);
        }
        self.queues.entry(dest).or_default().push_back(pkt);
        self.len += 1;
        Ok(())
    }

    pub fn take(&mut self, dest: NodeId) -> Vec<DataPacket> {
        let q = self.queues.remove(&dest).unwrap_or_default();
        self.len -= q.len();
        q.into()
    }
}
