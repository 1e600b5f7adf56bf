//! Data-packet ledger and the evaluation metrics computed from it.
//!
//! Only data packets enter the send/receive/drop accounting. Routing, probe
//! and alert transmissions are tallied separately as control overhead.
//!
//! Packets whose fate is unknown at the end of a run (still buffered or in
//! the air) are "in flight". By default they are left out of the delivery and
//! loss ratios; with strict accounting they count as lost.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::packet::FlowId;
use crate::sim::SimTime;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropCause {
    Blackhole,
    Link,
    Buffer,
    NoRoute,
}

impl DropCause {
    pub const ALL: [DropCause; 4] = [DropCause::Blackhole, DropCause::Link, DropCause::Buffer, DropCause::NoRoute];

    pub fn label(self) -> &'static str {
        match self {
            DropCause::Blackhole => "blackhole",
            DropCause::Link => "link",
            DropCause::Buffer => "buffer",
            DropCause::NoRoute => "no-route",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControlKind {
    Rreq,
    Rrep,
    Probe,
    ProbeAck,
    Alert,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum LedgerEvent {
    Send { flow: FlowId, seq: u64, t: SimTime, bytes: u32 },
    Receive { flow: FlowId, seq: u64, t: SimTime },
    Drop { flow: FlowId, seq: u64, t: SimTime, cause: DropCause },
    Control { t: SimTime, kind: ControlKind },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LedgerFault {
    #[error("{flow}/{seq}: sent twice")]
    DuplicateSend { flow: FlowId, seq: u64 },
    #[error("{flow}/{seq}: {what} without a matching send")]
    Unsent { flow: FlowId, seq: u64, what: &'static str },
    #[error("{flow}/{seq}: {what} after the packet was already {prior}")]
    AlreadyFinal {
        flow: FlowId,
        seq: u64,
        what: &'static str,
        prior: &'static str,
    },
    #[error("{flow}/{seq}: {what} at {t} precedes send at {sent}")]
    BeforeSend {
        flow: FlowId,
        seq: u64,
        what: &'static str,
        t: SimTime,
        sent: SimTime,
    },
}

#[derive(Debug, Error)]
pub enum LedgerIoError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error("line {line}: {source}")]
    Fault { line: usize, source: LedgerFault },
}

#[derive(Clone, Copy, Debug)]
struct SendInfo {
    t: SimTime,
    bytes: u32,
}

#[derive(Clone, Copy, Debug)]
enum Fate {
    Received,
    Dropped(DropCause),
}

#[derive(Clone, Debug, Default)]
pub struct MetricsLedger {
    events: Vec<LedgerEvent>,
    sends: HashMap<(FlowId, u64), SendInfo>,
    fates: HashMap<(FlowId, u64), Fate>,
    control: u64,
}

impl MetricsLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, event: LedgerEvent) -> Result<(), LedgerFault> {
        match &event {
            &LedgerEvent::Send { flow, seq, t, bytes } => {
                if self.sends.contains_key(&(flow, seq)) {
                    return Err(LedgerFault::DuplicateSend { flow, seq });
                }
                self.sends.insert((flow, seq), SendInfo { t, bytes });
            }
            &LedgerEvent::Receive { flow, seq, t } => {
                self.finalize(flow, seq, t, "receive", Fate::Received)?;
            }
            &LedgerEvent::Drop { flow, seq, t, cause } => {
                self.finalize(flow, seq, t, "drop", Fate::Dropped(cause))?;
            }
            LedgerEvent::Control { .. } => self.control += 1,
        }
        self.events.push(event);
        Ok(())
    }

    fn finalize(&mut self, flow: FlowId, seq: u64, t: SimTime, what: &'static str, fate: Fate) -> Result<(), LedgerFault> {
        let Some(sent) = self.sends.get(&(flow, seq)) else {
            return Err(LedgerFault::Unsent { flow, seq, what });
        };
        if t < sent.t {
            return Err(LedgerFault::BeforeSend {
                flow,
                seq,
                what,
                t,
                sent: sent.t,
            });
        }
        if let Some(prior) = self.fates.get(&(flow, seq)) {
            let prior = match prior {
                Fate::Received => "received",
                Fate::Dropped(_) => "dropped",
            };
            return Err(LedgerFault::AlreadyFinal { flow, seq, what, prior });
        }
        self.fates.insert((flow, seq), fate);
        Ok(())
    }

    pub fn send(&mut self, flow: FlowId, seq: u64, t: SimTime, bytes: u32) -> Result<(), LedgerFault> {
        self.record(LedgerEvent::Send { flow, seq, t, bytes })
    }

    pub fn receive(&mut self, flow: FlowId, seq: u64, t: SimTime) -> Result<(), LedgerFault> {
        self.record(LedgerEvent::Receive { flow, seq, t })
    }

    pub fn drop_packet(&mut self, flow: FlowId, seq: u64, t: SimTime, cause: DropCause) -> Result<(), LedgerFault> {
        self.record(LedgerEvent::Drop { flow, seq, t, cause })
    }

    pub fn control(&mut self, t: SimTime, kind: ControlKind) {
        self.events.push(LedgerEvent::Control { t, kind });
        self.control += 1;
    }

    pub fn events(&self) -> &[LedgerEvent] {
        &self.events
    }

    pub fn originated(&self) -> u64 {
        self.sends.len() as u64
    }

    pub fn received(&self) -> u64 {
        self.fates.values().filter(|f| matches!(f, Fate::Received)).count() as u64
    }

    pub fn dropped(&self) -> u64 {
        self.fates.values().filter(|f| matches!(f, Fate::Dropped(_))).count() as u64
    }

    pub fn dropped_by(&self, cause: DropCause) -> u64 {
        self.fates
            .values()
            .filter(|f| matches!(f, Fate::Dropped(c) if *c == cause))
            .count() as u64
    }

    /// Sent packets with neither a receive nor a drop.
    pub fn in_flight(&self) -> u64 {
        self.originated() - self.fates.len() as u64
    }

    pub fn control_packets(&self) -> u64 {
        self.control
    }

    pub fn received_bytes(&self) -> u64 {
        self.fates
            .iter()
            .filter(|(_, f)| matches!(f, Fate::Received))
            .map(|(k, _)| u64::from(self.sends[k].bytes))
            .sum()
    }

    /// End-to-end delays of delivered packets, in send order.
    pub fn delays(&self) -> Vec<f64> {
        self.events
            .iter()
            .filter_map(|e| match *e {
                LedgerEvent::Receive { flow, seq, t } => {
                    Some((t - self.sends[&(flow, seq)].t).as_secs_f64())
                }
                _ => None,
            })
            .collect()
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, LedgerIoError> {
        let mut ledger = MetricsLedger::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let event: LedgerEvent =
                serde_json::from_str(&line).map_err(|source| LedgerIoError::Parse { line: i + 1, source })?;
            ledger
                .record(event)
                .map_err(|source| LedgerIoError::Fault { line: i + 1, source })?;
        }
        Ok(ledger)
    }
}

/// Received over originated.
pub fn delivery_ratio(received: u64, originated: u64) -> Option<f64> {
    (originated > 0).then(|| received as f64 / originated as f64)
}

/// Received payload in bits per second of simulated time.
pub fn throughput_bps(received_bytes: u64, duration_secs: f64) -> f64 {
    received_bytes as f64 * 8.0 / duration_secs
}

/// Mean of per-packet delays (seconds in, milliseconds out).
pub fn mean_delay_ms(delays_secs: &[f64]) -> Option<f64> {
    if delays_secs.is_empty() {
        return None;
    }
    Some(delays_secs.iter().sum::<f64>() / delays_secs.len() as f64 * 1e3)
}

/// Share of sent packets that never arrived, in percent.
pub fn loss_ratio_percent(sent: u64, received: u64) -> Option<f64> {
    (sent > 0).then(|| (sent.saturating_sub(received)) as f64 / sent as f64 * 100.0)
}

/// `dropped / (dropped + sent)`, in percent.
pub fn drop_ratio_percent(dropped: u64, sent: u64) -> Option<f64> {
    let total = dropped + sent;
    (total > 0).then(|| dropped as f64 / total as f64 * 100.0)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossAccounting {
    /// In-flight packets are neither delivered nor lost.
    #[default]
    ExcludeInFlight,
    /// In-flight packets count as lost.
    Strict,
}

impl LossAccounting {
    fn basis(self, ledger: &MetricsLedger) -> u64 {
        match self {
            LossAccounting::ExcludeInFlight => ledger.originated() - ledger.in_flight(),
            LossAccounting::Strict => ledger.originated(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Throughput {
    pub pdr: Option<f64>,
    pub throughput_bps: f64,
}

pub fn throughput(ledger: &MetricsLedger, duration_secs: f64, accounting: LossAccounting) -> Throughput {
    Throughput {
        pdr: delivery_ratio(ledger.received(), accounting.basis(ledger)),
        throughput_bps: throughput_bps(ledger.received_bytes(), duration_secs),
    }
}

pub fn avg_end_to_end_delay(ledger: &MetricsLedger) -> Option<f64> {
    mean_delay_ms(&ledger.delays())
}

pub fn packet_loss_ratio(ledger: &MetricsLedger, accounting: LossAccounting) -> Option<f64> {
    loss_ratio_percent(accounting.basis(ledger), ledger.received())
}

pub fn drop_packet_ratio(ledger: &MetricsLedger) -> Option<f64> {
    drop_ratio_percent(ledger.dropped(), ledger.originated())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub duration_s: f64,
    pub originated: u64,
    pub received: u64,
    pub dropped: u64,
    pub in_flight: u64,
    pub drops_by_cause: BTreeMap<DropCause, u64>,
    pub pdr: Option<f64>,
    pub throughput_bps: f64,
    pub avg_delay_ms: Option<f64>,
    pub plr_percent: Option<f64>,
    pub dpr_percent: Option<f64>,
    pub control_overhead_packets: u64,
}

impl MetricsReport {
    pub fn from_ledger(ledger: &MetricsLedger, duration_secs: f64, accounting: LossAccounting) -> Self {
        let tp = throughput(ledger, duration_secs, accounting);
        MetricsReport {
            duration_s: duration_secs,
            originated: ledger.originated(),
            received: ledger.received(),
            dropped: ledger.dropped(),
            in_flight: ledger.in_flight(),
            drops_by_cause: DropCause::ALL.iter().map(|&c| (c, ledger.dropped_by(c))).collect(),
            pdr: tp.pdr,
            throughput_bps: tp.throughput_bps,
            avg_delay_ms: avg_end_to_end_delay(ledger),
            plr_percent: packet_loss_ratio(ledger, accounting),
            dpr_percent: drop_packet_ratio(ledger),
            control_overhead_packets: ledger.control_packets(),
        }
    }

    /// `key=value` lines; absent metrics print as `NA`.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "duration_s={}", self.duration_s);
        let _ = writeln!(s, "originated={}", self.originated);
        let _ = writeln!(s, "received={}", self.received);
        let _ = writeln!(s, "dropped={}", self.dropped);
        let _ = writeln!(s, "in_flight={}", self.in_flight);
        for (cause, n) in &self.drops_by_cause {
            let _ = writeln!(s, "dropped.{}={}", cause.label(), n);
        }
        let _ = writeln!(s, "pdr={}", fmt_opt(self.pdr));
        let _ = writeln!(s, "throughput_bps={}", self.throughput_bps);
        let _ = writeln!(s, "avg_delay_ms={}", fmt_opt(self.avg_delay_ms));
        let _ = writeln!(s, "plr_percent={}", fmt_opt(self.plr_percent));
        let _ = writeln!(s, "dpr_percent={}", fmt_opt(self.dpr_percent));
        let _ = writeln!(s, "control_overhead_packets={}", self.control_overhead_packets);
        s
    }

    pub const CSV_HEADER: [&'static str; 6] = ["pdr", "throughput_bps", "delay_ms", "plr", "dpr", "overhead"];

    /// Values in `CSV_HEADER` order; absent metrics are empty fields.
    pub fn csv_fields(&self) -> [String; 6] {
        [
            csv_opt(self.pdr),
            self.throughput_bps.to_string(),
            csv_opt(self.avg_delay_ms),
            csv_opt(self.plr_percent),
            csv_opt(self.dpr_percent),
            self.control_overhead_packets.to_string(),
        ]
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

fn csv_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    const F: FlowId = FlowId(1);

    fn t(ms: u64) -> SimTime {
        SimTime::from_millis(ms)
    }

    #[test]
    fn happy_path_records_both() {
        let mut l = MetricsLedger::new();
        l.send(F, 1, t(0), 512).unwrap();
        l.receive(F, 1, t(10)).unwrap();
        assert_eq!(l.events().len(), 2);
        assert_eq!((l.originated(), l.received(), l.in_flight()), (1, 1, 0));
    }

    #[test]
    fn receive_without_send_faults() {
        let mut l = MetricsLedger::new();
        assert!(matches!(l.receive(F, 9, t(1)), Err(LedgerFault::Unsent { .. })));
    }

    #[test]
    fn drop_after_receive_faults() {
        let mut l = MetricsLedger::new();
        l.send(F, 1, t(0), 512).unwrap();
        l.receive(F, 1, t(5)).unwrap();
        assert!(matches!(l.drop_packet(F, 1, t(6), DropCause::Link), Err(LedgerFault::AlreadyFinal { .. })));
        assert!(matches!(l.receive(F, 1, t(6)), Err(LedgerFault::AlreadyFinal { .. })));
        assert_eq!(l.events().len(), 2);
    }

    #[test]
    fn throughput_both_forms() {
        let mut l = MetricsLedger::new();
        for s in 0..100 {
            l.send(F, s, t(s), 512).unwrap();
            if s < 80 {
                l.receive(F, s, t(s + 1)).unwrap();
            } else {
                l.drop_packet(F, s, t(s + 1), DropCause::Blackhole).unwrap();
            }
        }
        let tp = throughput(&l, 100.0, LossAccounting::ExcludeInFlight);
        assert!((tp.pdr.unwrap() - 0.8).abs() < 1e-12);
        assert!((tp.throughput_bps - 3276.8).abs() < 1e-9);
        assert!((packet_loss_ratio(&l, LossAccounting::Strict).unwrap() - 20.0).abs() < 1e-12);
    }

    #[test]
    fn empty_ledger_metrics_absent() {
        let l = MetricsLedger::new();
        let tp = throughput(&l, 10.0, LossAccounting::ExcludeInFlight);
        assert_eq!(tp.pdr, None);
        assert_eq!(avg_end_to_end_delay(&l), None);
        assert_eq!(packet_loss_ratio(&l, LossAccounting::Strict), None);
        assert_eq!(drop_packet_ratio(&l), None);
    }

    #[test]
    fn mean_delay_hand_values() {
        assert!((mean_delay_ms(&[0.010, 0.020]).unwrap() - 15.0).abs() < 1e-9);
        assert!((mean_delay_ms(&[0.0042]).unwrap() - 4.2).abs() < 1e-9);
        assert_eq!(mean_delay_ms(&[]), None);
    }

    #[test]
    fn loss_ratio_hand_values() {
        assert_eq!(loss_ratio_percent(100, 80), Some(20.0));
        assert_eq!(loss_ratio_percent(100, 100), Some(0.0));
        assert_eq!(loss_ratio_percent(100, 0), Some(100.0));
        assert_eq!(loss_ratio_percent(0, 0), None);
    }

    #[test]
    fn drop_ratio_hand_values() {
        assert_eq!(drop_ratio_percent(20, 80), Some(20.0));
        assert_eq!(drop_ratio_percent(0, 80), Some(0.0));
        assert_eq!(drop_ratio_percent(5, 0), Some(100.0));
        assert_eq!(drop_ratio_percent(0, 0), None);
    }

    #[test]
    fn in_flight_accounting_modes() {
        let mut l = MetricsLedger::new();
        for s in 0..10 {
            l.send(F, s, t(0), 100).unwrap();
        }
        for s in 0..6 {
            l.receive(F, s, t(3)).unwrap();
        }
        l.drop_packet(F, 6, t(3), DropCause::Link).unwrap();
        // 3 packets still in flight
        let lenient = MetricsReport::from_ledger(&l, 1.0, LossAccounting::ExcludeInFlight);
        assert_eq!(lenient.in_flight, 3);
        assert!((lenient.pdr.unwrap() - 6.0 / 7.0).abs() < 1e-12);
        let strict = MetricsReport::from_ledger(&l, 1.0, LossAccounting::Strict);
        assert!((strict.pdr.unwrap() - 0.6).abs() < 1e-12);
        assert!((strict.plr_percent.unwrap() - 40.0).abs() < 1e-12);
        assert_eq!(lenient.originated, lenient.received + lenient.dropped + lenient.in_flight);
    }

    #[test]
    fn jsonl_round_trip_reproduces_report() {
        let mut l = MetricsLedger::new();
        l.send(F, 0, t(0), 512).unwrap();
        l.control(t(0), ControlKind::Rreq);
        l.send(F, 1, t(1), 512).unwrap();
        l.receive(F, 0, t(7)).unwrap();
        l.drop_packet(F, 1, t(9), DropCause::Blackhole).unwrap();
        l.send(F, 2, t(2), 512).unwrap();
        let mut buf = Vec::new();
        l.write_jsonl(&mut buf).unwrap();
        let back = MetricsLedger::read_jsonl(buf.as_slice()).unwrap();
        let a = MetricsReport::from_ledger(&l, 5.0, LossAccounting::ExcludeInFlight);
        let b = MetricsReport::from_ledger(&back, 5.0, LossAccounting::ExcludeInFlight);
        assert_eq!(a.to_kv(), b.to_kv());
        assert_eq!(a.control_overhead_packets, 1);
    }
}
