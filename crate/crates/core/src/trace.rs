//! Optional JSON-lines traces. Each channel writes to its own sink; a
//! disabled channel costs one branch per call.

use std::io::{self, Write};

use serde::Serialize;

use crate::packet::{FlowId, NodeId, Packet, RouteRecord};
use crate::sim::SimTime;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Channel {
    Events,
    Packets,
    Defense,
    Mobility,
}

impl Channel {
    pub const ALL: [Channel; 4] = [Channel::Events, Channel::Packets, Channel::Defense, Channel::Mobility];

    pub fn label(self) -> &'static str {
        match self {
            Channel::Events => "events",
            Channel::Packets => "packets",
            Channel::Defense => "defense",
            Channel::Mobility => "mobility",
        }
    }
}

impl std::str::FromStr for Channel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Channel::ALL
            .into_iter()
            .find(|c| c.label() == s)
            .ok_or_else(|| format!("unknown trace channel `{s}`"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PacketEvent {
    Send,
    Recv,
    Fwd,
    Drop,
}

#[derive(Serialize)]
struct EventLine<'a> {
    t: SimTime,
    seq: u64,
    kind: &'a str,
    node: Option<NodeId>,
    detail: &'a str,
}

#[derive(Serialize)]
struct PacketLine<'a> {
    t: SimTime,
    event: PacketEvent,
    kind: &'a str,
    from: NodeId,
    to: Option<NodeId>,
    flow: Option<FlowId>,
    seq: Option<u64>,
    route: Option<&'a RouteRecord>,
}

#[derive(Serialize)]
struct MobilityLine {
    t: SimTime,
    node: NodeId,
    x: f64,
    y: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CandidateTrace {
    pub route: RouteRecord,
    pub hops: u32,
    pub iter: u32,
    pub p_bh: f64,
    pub fr: f64,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DefenseDecision {
    pub t: SimTime,
    pub origin: NodeId,
    pub discovery: u32,
    pub candidates: Vec<CandidateTrace>,
    pub chosen: Option<RouteRecord>,
    pub rejected: Vec<RouteRecord>,
    pub alerts: Vec<NodeId>,
}

type Sink = Box<dyn Write + Send>;

#[derive(Default)]
pub struct Tracer {
    events: Option<Sink>,
    packets: Option<Sink>,
    defense: Option<Sink>,
    mobility: Option<Sink>,
    error: Option<io::Error>,
}

impl Tracer {
    pub fn disabled() -> Self {
        Self::default()
    }

    pub fn with(mut self, channel: Channel, sink: Sink) -> Self {
        *self.slot(channel) = Some(sink);
        self
    }

    fn slot(&mut self, channel: Channel) -> &mut Option<Sink> {
        match channel {
            Channel::Events => &mut self.events,
            Channel::Packets => &mut self.packets,
            Channel::Defense => &mut self.defense,
            Channel::Mobility => &mut self.mobility,
        }
    }

    pub fn enabled(&self, channel: Channel) -> bool {
        match channel {
            Channel::Events => self.events.is_some(),
            Channel::Packets => self.packets.is_some(),
            Channel::Defense => self.defense.is_some(),
            Channel::Mobility => self.mobility.is_some(),
        }
    }

    fn emit<T: Serialize>(&mut self, channel: Channel, line: &T) {
        if self.error.is_some() {
            return;
        }
        let Some(w) = self.slot(channel).as_mut() else {
            return;
        };
        let res = serde_json::to_writer(&mut *w, line)
            .map_err(io::Error::from)
            .and_then(|_| w.write_all(b"\n"));
        if let Err(e) = res {
            self.error = Some(e);
        }
    }

    pub fn event(&mut self, t: SimTime, seq: u64, kind: &str, node: Option<NodeId>, detail: &str) {
        if self.events.is_some() {
            self.emit(Channel::Events, &EventLine { t, seq, kind, node, detail });
        }
    }

    pub fn packet(&mut self, t: SimTime, event: PacketEvent, packet: &Packet, from: NodeId, to: Option<NodeId>) {
        if self.packets.is_none() {
            return;
        }
        let (flow, seq) = match packet {
            Packet::Data(d) => (Some(d.flow), Some(d.seq)),
            _ => (None, None),
        };
        let line = PacketLine {
            t,
            event,
            kind: packet.kind(),
            from,
            to,
            flow,
            seq,
            route: packet.route(),
        };
        self.emit(Channel::Packets, &line);
    }

    pub fn mobility(&mut self, t: SimTime, node: NodeId, x: f64, y: f64) {
        if self.mobility.is_some() {
            self.emit(Channel::Mobility, &MobilityLine { t, node, x, y });
        }
    }

    pub fn defense(&mut self, decision: &DefenseDecision) {
        if self.defense.is_some() {
            self.emit(Channel::Defense, decision);
        }
    }

    /// Flushes every sink and reports the first write error, if any.
    pub fn finish(&mut self) -> io::Result<()> {
        if let Some(e) = self.error.take() {
            return Err(e);
        }
        for c in Channel::ALL {
            if let Some(w) = self.slot(c).as_mut() {
                w.flush()?;
            }
        }
        Ok(())
    }
}
