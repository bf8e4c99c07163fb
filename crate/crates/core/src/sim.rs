//! The event loop: devices move along their traces, generate data, uplink to
//! gateways and, under a forwarding scheme, hand bundles to overheard peers.

use std::collections::{BTreeMap, HashSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::channel::{ChannelSample, LinkKind};
use crate::config::ScenarioConfig;
use crate::engine::{EventQueue, RngStreams, RunSummary, SimTime};
use crate::error::{Error, Result};
use crate::forwarding::{
    on_overhear, pick_best, ContactTracker, DataPacket, DeviceQueue, HeardHeader, LocalView, Message, MessageId,
    RelayPlan, Scheme, BUNDLE_LIMIT,
};
use crate::mac::{airtime_ms, queue_window_fraction, receive_window, DeviceClass, MacState, UplinkOutcome};
use crate::metrics::{finalize, DeliveryRecord, MetricsCollector, MetricsReport, RunTotals};
use crate::mobility::{MobilityTrace, Point};
use crate::DeviceId;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum SimEvent {
    Appear(DeviceId),
    Disappear(DeviceId),
    Generate(DeviceId),
    TxEnd(usize),
    Release { device: DeviceId, token: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TxKind {
    Uplink,
    Relay { to: DeviceId },
}

/// One frame put on air.
#[derive(Clone, Debug, PartialEq)]
pub struct TxRecord {
    pub sender: DeviceId,
    pub kind: TxKind,
    pub start: SimTime,
    pub end: SimTime,
    pub payload_bytes: usize,
    pub messages: Vec<MessageId>,
    /// Uplinks: acknowledged by a gateway. Relays: messages taken over.
    pub acked: bool,
    pub accepted: usize,
}

struct Transmission {
    record: TxRecord,
    header: HeaderFields,
    receivers: Vec<(DeviceId, f64)>,
    gateway_capacity: f64,
}

#[derive(Clone, Copy)]
struct HeaderFields {
    rca_etx_ms: u32,
    queue_len: Option<u16>,
}

struct Device {
    id: DeviceId,
    appear: SimTime,
    /// Last instant the device can be on air.
    horizon: SimTime,
    active: bool,
    queue: DeviceQueue,
    mac: MacState,
    tracker: ContactTracker,
    heard: BTreeMap<DeviceId, HeardHeader>,
    relay_wanted: bool,
    release_token: u64,
    release_at: Option<SimTime>,
    next_generation: Option<SimTime>,
}

/// Everything a finished run produced.
#[derive(Debug)]
pub struct SimOutput {
    pub report: MetricsReport,
    pub records: Vec<DeliveryRecord>,
    pub totals: RunTotals,
    pub tx_log: Vec<TxRecord>,
    pub summary: RunSummary,
}

struct Simulator<'a> {
    cfg: &'a ScenarioConfig,
    traces: &'a [MobilityTrace],
    gateways: &'a [Point],
    end: SimTime,
    period: SimTime,
    queue: EventQueue<SimEvent>,
    devices: Vec<Device>,
    txs: Vec<Transmission>,
    collector: MetricsCollector,
    shadowing: ChaCha8Rng,
    jitter: ChaCha8Rng,
    next_message: u64,
    generated: u64,
}

/// Run one scenario over the given traces and gateway positions.
pub fn simulate(cfg: &ScenarioConfig, traces: &[MobilityTrace], gateways: &[Point]) -> Result<SimOutput> {
    cfg.validate_model()?;
    let mut streams = RngStreams::new(cfg.seed);
    let end = SimTime::from_secs(cfg.duration_s);
    let prior = cfg.prior();
    let devices = traces
        .iter()
        .enumerate()
        .map(|(i, tr)| Device {
            id: DeviceId(i as u32),
            appear: tr.appear(),
            horizon: tr.disappear().min(end),
            active: false,
            queue: DeviceQueue::new(cfg.q_max),
            mac: MacState::default(),
            tracker: ContactTracker::new(cfg.alpha, prior),
            heard: BTreeMap::new(),
            relay_wanted: false,
            release_token: 0,
            release_at: None,
            next_generation: None,
        })
        .collect();
    let sim = Simulator {
        cfg,
        traces,
        gateways,
        end,
        period: SimTime::from_secs(cfg.message_period_s),
        queue: EventQueue::new(),
        devices,
        txs: Vec::new(),
        collector: MetricsCollector::new(),
        shadowing: streams.stream("shadowing"),
        jitter: streams.stream("jitter"),
        next_message: 0,
        generated: 0,
    };
    sim.run()
}

impl Simulator<'_> {
    fn run(mut self) -> Result<SimOutput> {
        for d in &self.devices {
            if d.appear < self.end {
                self.queue.schedule(d.appear, SimEvent::Appear(d.id));
                if d.horizon < self.end {
                    self.queue.schedule(d.horizon, SimEvent::Disappear(d.id));
                }
            }
        }
        while let Some((t, ev)) = self.queue.pop_until(self.end) {
            match ev {
                SimEvent::Appear(d) => self.on_appear(d, t),
                SimEvent::Disappear(d) => self.on_disappear(d, t),
                SimEvent::Generate(d) => self.on_generate(d, t)?,
                SimEvent::TxEnd(i) => self.on_tx_end(i, t)?,
                SimEvent::Release { device, token } => {
                    let dev = &mut self.devices[device.index()];
                    if dev.release_token == token {
                        dev.release_at = None;
                        self.try_transmit(device, t);
                    }
                }
            }
        }
        self.queue.advance_to(self.end);
        let summary = RunSummary {
            end: self.end,
            events_processed: self.queue.processed(),
            events_scheduled: self.queue.scheduled(),
        };
        self.finish(summary)
    }

    fn position(&self, d: DeviceId, t: SimTime) -> Option<Point> {
        self.traces[d.index()].position_at(t)
    }

    fn jittered(&mut self, at: SimTime) -> SimTime {
        let max_ms = (self.cfg.mac.retry_jitter_s * 1000.0).round() as u64;
        if max_ms == 0 {
            at
        } else {
            at + SimTime::from_millis(self.jitter.random_range(0..=max_ms))
        }
    }

    fn packet_bits(&self, queue_len: usize) -> f64 {
        let n = queue_len.clamp(1, BUNDLE_LIMIT);
        (DataPacket::size_for(self.cfg.scheme, n, self.cfg.message_size_bytes as usize) * 8) as f64
    }

    /// Time until the device may next put data on air.
    fn t_wait(&self, d: DeviceId, t: SimTime) -> f64 {
        let dev = &self.devices[d.index()];
        let opportunity = if dev.mac.uplink_pending {
            t
        } else {
            dev.next_generation.unwrap_or(t + self.period)
        };
        dev.mac.next_tx_allowed.max(opportunity).saturating_sub(t).as_secs_f64()
    }

    fn metric(&self, d: DeviceId, t: SimTime) -> f64 {
        let dev = &self.devices[d.index()];
        dev.tracker
            .node_to_sink(t, self.t_wait(d, t), self.packet_bits(dev.queue.len()))
    }

    fn open_window(&mut self, d: DeviceId, t: SimTime) {
        let phi = self.cfg.robc.rgq(self.metric(d, t));
        let dev = &mut self.devices[d.index()];
        let fraction = queue_window_fraction(self.cfg.robc.phi_max, dev.queue.len(), phi, self.cfg.q_max);
        if let Some((since, until)) =
            receive_window(self.cfg.mac.device_class, t, self.cfg.message_period_s as f64, fraction)
        {
            dev.mac.start_listening(since, until);
        }
    }

    fn on_appear(&mut self, d: DeviceId, t: SimTime) {
        let period = self.period;
        let dev = &mut self.devices[d.index()];
        dev.active = true;
        if self.cfg.mac.device_class == DeviceClass::ModifiedClassC {
            dev.mac.start_listening(t, None);
        }
        let first = t + period;
        if first <= dev.horizon {
            dev.next_generation = Some(first);
            self.queue.schedule(first, SimEvent::Generate(d));
        }
    }

    fn on_disappear(&mut self, d: DeviceId, t: SimTime) {
        let dev = &mut self.devices[d.index()];
        dev.active = false;
        dev.mac.stop_listening(t);
        dev.relay_wanted = false;
        dev.release_token += 1;
        dev.release_at = None;
        dev.next_generation = None;
    }

    fn on_generate(&mut self, d: DeviceId, t: SimTime) -> Result<()> {
        let period = self.period;
        let size = self.cfg.message_size_bytes;
        let id = MessageId(self.next_message);
        self.next_message += 1;
        self.generated += 1;
        let dev = &mut self.devices[d.index()];
        dev.queue.push_generated(Message::new(id, d, t, size));
        dev.mac.reset_retries();
        let next = t + period;
        dev.next_generation = (next <= dev.horizon).then_some(next);
        if let Some(n) = dev.next_generation {
            self.queue.schedule(n, SimEvent::Generate(d));
        }
        let wait = self.t_wait(d, t);
        let bits = self.packet_bits(self.devices[d.index()].queue.len());
        self.devices[d.index()].tracker.commit_slot(t, wait, bits);
        self.try_transmit(d, t);
        Ok(())
    }

    fn schedule_release(&mut self, d: DeviceId, earliest: SimTime) {
        let at = self.jittered(earliest);
        let dev = &mut self.devices[d.index()];
        if dev.release_at.is_some_and(|r| r <= at) {
            return;
        }
        dev.release_token += 1;
        dev.release_at = Some(at);
        let token = dev.release_token;
        self.queue.schedule(at, SimEvent::Release { device: d, token });
    }

    fn relay_plans(&self, d: DeviceId, t: SimTime) -> Vec<RelayPlan> {
        let dev = &self.devices[d.index()];
        let local_metric = self.metric(d, t);
        let bits = self.packet_bits(dev.queue.len());
        dev.heard
            .values()
            .filter(|h| h.is_fresh(t, self.period))
            .filter(|h| self.devices[h.from.index()].active)
            .filter_map(|h| {
                let local = LocalView {
                    metric_s: local_metric,
                    queue_len: dev.queue.len(),
                    eligible: dev.queue.eligible_count(h.from),
                    bundle_bits: bits,
                    q_max: self.cfg.q_max,
                };
                on_overhear(self.cfg.scheme, &local, h, &self.cfg.channel, &self.cfg.robc)
            })
            .collect()
    }

    /// Transmission opportunity: a wanted relay goes first, then the uplink.
    fn try_transmit(&mut self, d: DeviceId, t: SimTime) {
        let dev = &self.devices[d.index()];
        if !dev.active || dev.mac.transmitting.is_some() {
            return;
        }
        let has_uplink = dev.mac.uplink_pending && !dev.queue.is_empty();
        if !dev.relay_wanted && !has_uplink {
            return;
        }
        if !dev.mac.gate_open(t) {
            let at = dev.mac.next_tx_allowed;
            self.schedule_release(d, at);
            return;
        }
        if dev.relay_wanted {
            self.devices[d.index()].relay_wanted = false;
            if self.cfg.scheme.forwards() {
                let plans = self.relay_plans(d, t);
                if let Some(plan) = pick_best(self.cfg.scheme, &plans) {
                    if self.start_tx(d, t, TxKind::Relay { to: plan.to }, plan.count) {
                        return;
                    }
                }
            }
        }
        if has_uplink {
            self.start_tx(d, t, TxKind::Uplink, BUNDLE_LIMIT);
        }
    }

    fn start_tx(&mut self, d: DeviceId, t: SimTime, kind: TxKind, count: usize) -> bool {
        let cfg = self.cfg;
        let dev = &self.devices[d.index()];
        let next_hop = match kind {
            TxKind::Uplink => None,
            TxKind::Relay { to } => Some(to),
        };
        let ids = dev.queue.oldest(count, next_hop);
        if ids.is_empty() {
            return false;
        }
        let payload_bytes = DataPacket::size_for(cfg.scheme, ids.len(), cfg.message_size_bytes as usize);
        let airtime = airtime_ms(payload_bytes, &cfg.mac).expect("bundle size validated");
        if t + airtime > dev.horizon {
            return false;
        }
        let header = HeaderFields {
            rca_etx_ms: DataPacket::encode_metric(self.metric(d, t)),
            queue_len: (cfg.scheme == Scheme::Robc).then(|| DataPacket::encode_queue_len(dev.queue.len())),
        };
        let Some(pos) = self.position(d, t) else {
            return false;
        };

        let mut receivers = Vec::new();
        if cfg.scheme.forwards() {
            for other in 0..self.devices.len() {
                if other == d.index() || !self.devices[other].active {
                    continue;
                }
                let oid = DeviceId(other as u32);
                let Some(p) = self.position(oid, t) else { continue };
                let s = ChannelSample::evaluate(LinkKind::DeviceToDevice, &pos, &p, &cfg.channel, &mut self.shadowing);
                if s.in_contact {
                    receivers.push((oid, s.rssi_dbm));
                }
            }
        }
        let mut gateway_capacity: f64 = 0.0;
        if kind == TxKind::Uplink {
            for g in self.gateways {
                let s = ChannelSample::evaluate(LinkKind::DeviceToGateway, &pos, g, &cfg.channel, &mut self.shadowing);
                if s.in_contact {
                    gateway_capacity = gateway_capacity.max(s.capacity_bps);
                }
            }
        }

        let dev = &mut self.devices[d.index()];
        let acked = match kind {
            TxKind::Uplink => {
                match dev
                    .mac
                    .attempt_uplink(t, true, gateway_capacity > 0.0, airtime, &cfg.mac)
                {
                    UplinkOutcome::Acked => true,
                    UplinkOutcome::Failed { .. } => false,
                    other => unreachable!("gate was open: {other:?}"),
                }
            }
            TxKind::Relay { .. } => {
                dev.mac.begin_tx(t, airtime, cfg.mac.duty_cycle);
                dev.mac.relay_count += 1;
                false
            }
        };
        let end = t + airtime;
        let idx = self.txs.len();
        self.txs.push(Transmission {
            record: TxRecord {
                sender: d,
                kind,
                start: t,
                end,
                payload_bytes,
                messages: ids,
                acked,
                accepted: 0,
            },
            header,
            receivers,
            gateway_capacity,
        });
        self.queue.schedule(end, SimEvent::TxEnd(idx));
        true
    }

    fn on_tx_end(&mut self, idx: usize, e: SimTime) -> Result<()> {
        let sender = self.txs[idx].record.sender;
        let start = self.txs[idx].record.start;
        self.devices[sender.index()].mac.end_tx();

        match self.txs[idx].record.kind {
            TxKind::Uplink => {
                let cap = self.txs[idx].gateway_capacity;
                let dev = &mut self.devices[sender.index()];
                if self.txs[idx].record.acked {
                    let delivered = dev.queue.remove_present(&self.txs[idx].record.messages);
                    for m in &delivered {
                        self.collector
                            .record_delivery(m, e)
                            .map_err(|err| Error::Invariant(err.to_string()))?;
                    }
                    self.txs[idx].record.accepted = delivered.len();
                    dev.tracker.record_uplink(e, cap);
                } else {
                    dev.tracker.record_uplink(e, 0.0);
                }
            }
            TxKind::Relay { to } => {
                let heard = self.devices[to.index()].active
                    && self.devices[to.index()].mac.heard_whole(start, e)
                    && self.txs[idx].receivers.iter().any(|(r, _)| *r == to);
                if heard {
                    let ids = &self.txs[idx].record.messages;
                    let k = ids.len().min(self.devices[to.index()].queue.free());
                    let taken = ids[ids.len() - k..].to_vec();
                    let mut moved = self.devices[sender.index()].queue.remove_present(&taken);
                    for m in &mut moved {
                        m.relay(sender, to);
                    }
                    let refused = self.devices[to.index()].queue.accept_relayed(moved);
                    debug_assert!(refused.is_empty());
                    self.txs[idx].record.accepted = k;
                    self.txs[idx].record.acked = k > 0;
                }
            }
        }

        if self.devices[sender.index()].active {
            self.open_window(sender, e);
        }

        // Every peer that caught the whole frame learns the sender's header.
        let header = self.txs[idx].header;
        let receivers = self.txs[idx].receivers.clone();
        for (r, rssi) in receivers {
            let rd = &self.devices[r.index()];
            if !rd.active || !rd.mac.heard_whole(start, e) {
                continue;
            }
            let heard = HeardHeader {
                from: sender,
                at: e,
                rca_etx_s: header.rca_etx_ms as f64 / 1000.0,
                queue_len: header.queue_len.map(usize::from),
                rssi_dbm: rssi,
            };
            self.devices[r.index()].heard.insert(sender, heard);
            let plan = {
                let rd = &self.devices[r.index()];
                let local = LocalView {
                    metric_s: self.metric(r, e),
                    queue_len: rd.queue.len(),
                    eligible: rd.queue.eligible_count(sender),
                    bundle_bits: self.packet_bits(rd.queue.len()),
                    q_max: self.cfg.q_max,
                };
                on_overhear(self.cfg.scheme, &local, &heard, &self.cfg.channel, &self.cfg.robc)
            };
            if plan.is_some() {
                self.devices[r.index()].relay_wanted = true;
                self.try_transmit(r, e);
            }
        }

        self.try_transmit(sender, e);
        Ok(())
    }

    fn finish(mut self, summary: RunSummary) -> Result<SimOutput> {
        for dev in &mut self.devices {
            if dev.active {
                dev.mac.stop_listening(dev.horizon);
            }
        }
        let mut totals = RunTotals {
            node_count: self.devices.iter().filter(|d| d.appear < self.end).count(),
            generated: self.generated,
            ..RunTotals::default()
        };
        let mut listen = SimTime::ZERO;
        for dev in &self.devices {
            totals.residual_queued += dev.queue.len() as u64;
            totals.drops += dev.queue.dropped();
            totals.tx_frames += dev.mac.tx_count;
            totals.uplink_frames += dev.mac.uplink_count;
            totals.relay_frames += dev.mac.relay_count;
            listen = listen + dev.mac.listen_time;
        }
        totals.listen_time_s = listen.as_secs_f64();
        self.audit(&totals)?;
        let records = self.collector.records().to_vec();
        let report = finalize(&records, &totals, self.end);
        Ok(SimOutput {
            report,
            records,
            totals,
            tx_log: self.txs.into_iter().map(|t| t.record).collect(),
            summary,
        })
    }

    fn audit(&self, totals: &RunTotals) -> Result<()> {
        let delivered = self.collector.delivered() as u64;
        if totals.generated != delivered + totals.residual_queued + totals.drops {
            return Err(Error::Invariant(format!(
                "conservation: generated {} != delivered {} + residual {} + drops {}",
                totals.generated, delivered, totals.residual_queued, totals.drops
            )));
        }
        let mut seen = HashSet::new();
        for r in self.collector.records() {
            if !seen.insert(r.message_id) {
                return Err(Error::Invariant(format!("message {:?} delivered twice", r.message_id)));
            }
            let unique: HashSet<_> = r.relay_path.iter().collect();
            if unique.len() != r.relay_path.len() {
                return Err(Error::Invariant(format!(
                    "message {:?} looped: {:?}",
                    r.message_id, r.relay_path
                )));
            }
        }
        for dev in &self.devices {
            if dev.queue.len() > dev.queue.capacity() {
                return Err(Error::Invariant(format!("{} queue over capacity", dev.id)));
            }
            if let Some(m) = dev.queue.iter().find(|m| seen.contains(&m.id)) {
                return Err(Error::Invariant(format!(
                    "message {:?} both delivered and queued",
                    m.id
                )));
            }
            if self.cfg.mac.device_class == DeviceClass::ModifiedClassC && dev.appear < self.end {
                let span = dev.horizon.saturating_sub(dev.appear);
                if dev.mac.listen_time + dev.mac.airtime_total != span {
                    return Err(Error::Invariant(format!(
                        "{}: listen {} + airtime {} != active {}",
                        dev.id, dev.mac.listen_time, dev.mac.airtime_total, span
                    )));
                }
            }
        }
        if self.txs.iter().any(|t| t.record.end > self.end) {
            return Err(Error::Invariant("transmission past the end of the run".into()));
        }
        Ok(())
    }
}
