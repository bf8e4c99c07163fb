//! Millisecond-by-millisecond reference model of a small forwarding run.
//!
//! Written from the protocol rules alone, with no simulator types, so that
//! its output can serve as a fixture for the event-driven engine. Every tick
//! is visited in order. Frames ending on the same millisecond are handled in
//! the order they began; any other pair of happenings (frame ends,
//! generations, deferred sends) on one millisecond rejects the script as
//! ambiguous.

use std::collections::BTreeMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rule {
    Baseline,
    Greedy,
    Backpressure,
}

#[derive(Clone, Debug)]
pub struct Script {
    pub gateway: (f64, f64),
    /// Per device: `(time_s, x, y)` waypoints; active from first to last.
    pub devices: Vec<Vec<(f64, f64, f64)>>,
    pub end_s: u64,
    pub period_s: u64,
    pub message_bytes: usize,
    pub d2d_m: f64,
    pub d2g_m: f64,
    pub q_max: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Delivery {
    pub id: u64,
    pub origin: usize,
    pub created_ms: u64,
    pub delivered_ms: u64,
    pub trail: Vec<usize>,
}

impl Delivery {
    pub fn line(&self) -> String {
        let trail: Vec<String> = self.trail.iter().map(|d| d.to_string()).collect();
        format!(
            "msg {} origin {} created_ms {} delivered_ms {} trail {}",
            self.id,
            self.origin,
            self.created_ms,
            self.delivered_ms,
            trail.join(">")
        )
    }
}

const TX_POWER: f64 = 14.0;
const REF_LOSS: f64 = 87.41;
const REF_DIST: f64 = 40.0;
const EXPONENT: f64 = 2.32;
const RSSI_MIN: f64 = -123.0;
const RSSI_MAX: f64 = -60.0;
const C_MAX: f64 = 5470.0;
const DUTY: f64 = 0.01;
const ATTEMPTS: u32 = 8;
const BUNDLE: usize = 12;
const ALPHA: f64 = 0.5;
const PHI_MIN: f64 = 1.0 / 86_400.0;
const PHI_MAX: f64 = 100.0;

fn rssi(d: f64) -> f64 {
    TX_POWER - REF_LOSS - 10.0 * EXPONENT * (d.max(REF_DIST) / REF_DIST).log10()
}

fn capacity(r: f64) -> f64 {
    if r < RSSI_MIN {
        0.0
    } else if r > RSSI_MAX {
        C_MAX
    } else {
        C_MAX * (r - RSSI_MIN) / (RSSI_MAX - RSSI_MIN)
    }
}

fn frame_ms(payload: usize) -> u64 {
    let ts = 128.0 / 125_000.0;
    let blocks = ((8.0 * payload as f64 + 16.0) / 28.0).ceil().max(0.0);
    let secs = 12.25 * ts + (8.0 + 5.0 * blocks) * ts;
    (secs * 1000.0 - 1e-9).ceil() as u64
}

fn phi(metric: f64) -> f64 {
    let p = if metric > 0.0 { 1.0 / metric } else { f64::INFINITY };
    p.clamp(PHI_MIN, PHI_MAX)
}

#[derive(Clone, Debug)]
struct Msg {
    id: u64,
    origin: usize,
    created: u64,
    trail: Vec<usize>,
}

impl Msg {
    fn may_visit(&self, to: usize) -> bool {
        !self.trail.contains(&to)
    }
}

#[derive(Clone, Copy)]
struct Header {
    at: u64,
    metric: f64,
    qlen: Option<usize>,
    rssi: f64,
}

#[derive(Clone)]
struct Frame {
    order: u64,
    start: u64,
    end: u64,
    to: Option<usize>,
    ids: Vec<u64>,
    acked: bool,
    gw_cap: f64,
    hearers: Vec<(usize, f64)>,
    metric: f64,
    qlen: Option<usize>,
}

#[derive(Default)]
struct Node {
    appear: u64,
    horizon: u64,
    queue: Vec<Msg>,
    allowed_at: u64,
    failures: u32,
    pending: bool,
    on_air: Option<Frame>,
    sent: Vec<(u64, u64)>,
    samples: Vec<f64>,
    prev_cap: Option<f64>,
    contact_end: Option<u64>,
    contact_cap: f64,
    heard: BTreeMap<usize, Header>,
    wants_relay: bool,
    wake_at: Option<u64>,
    next_gen: Option<u64>,
}

struct World<'a> {
    s: &'a Script,
    rule: Rule,
    nodes: Vec<Node>,
    next_id: u64,
    frames: u64,
    out: Vec<Delivery>,
}

impl World<'_> {
    fn header_bytes(&self) -> usize {
        if self.rule == Rule::Backpressure {
            12
        } else {
            10
        }
    }

    fn bits(&self, qlen: usize) -> f64 {
        ((self.header_bytes() + qlen.clamp(1, BUNDLE) * self.s.message_bytes) * 8) as f64
    }

    fn prior(&self) -> f64 {
        self.s.period_s as f64 + ((self.header_bytes() + BUNDLE * self.s.message_bytes) * 8) as f64 / C_MAX
    }

    fn active(&self, d: usize, t: u64) -> bool {
        let w = &self.s.devices[d];
        let ts = t as f64 / 1000.0;
        ts >= w[0].0 && ts <= w[w.len() - 1].0
    }

    fn pos(&self, d: usize, t: u64) -> (f64, f64) {
        let w = &self.s.devices[d];
        let ts = t as f64 / 1000.0;
        if ts <= w[0].0 {
            return (w[0].1, w[0].2);
        }
        for seg in w.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            if ts <= b.0 {
                let f = (ts - a.0) / (b.0 - a.0);
                return (a.1 + f * (b.1 - a.1), a.2 + f * (b.2 - a.2));
            }
        }
        let l = w[w.len() - 1];
        (l.1, l.2)
    }

    fn wait_s(&self, d: usize, t: u64) -> f64 {
        let n = &self.nodes[d];
        let period = self.s.period_s * 1000;
        let chance = if n.pending { t } else { n.next_gen.unwrap_or(t + period) };
        (n.allowed_at.max(chance).saturating_sub(t)) as f64 / 1000.0
    }

    fn service_sample(&self, d: usize, t: u64) -> f64 {
        let n = &self.nodes[d];
        let bits = self.bits(n.queue.len());
        let wait = self.wait_s(d, t);
        match (n.prev_cap, n.contact_end) {
            (Some(c), _) if c > 0.0 => bits / c + wait,
            (_, Some(end)) => bits / n.contact_cap + (t - end) as f64 / 1000.0 + wait,
            _ => self.prior(),
        }
    }

    /// Smoothed delay to a gateway with the newest slot replaced by the
    /// live sample.
    fn metric(&self, d: usize, t: u64) -> f64 {
        let n = &self.nodes[d];
        let live = self.service_sample(d, t);
        let older = &n.samples[..n.samples.len().saturating_sub(1)];
        let mut acc: Option<f64> = None;
        for &x in older {
            acc = Some(match acc {
                None => x,
                Some(p) => (1.0 - ALPHA) * p + ALPHA * x,
            });
        }
        match acc {
            None => live,
            Some(p) => (1.0 - ALPHA) * p + ALPHA * live,
        }
    }

    fn heard_whole(&self, r: usize, start: u64, end: u64) -> bool {
        let n = &self.nodes[r];
        n.appear <= start && n.on_air.is_none() && n.sent.iter().all(|&(s, e)| !(s < end && e > start))
    }

    /// Offer to `from`, or `None` when this header does not justify a relay.
    fn offer(&self, d: usize, t: u64, from: usize, h: &Header) -> Option<(usize, f64)> {
        let n = &self.nodes[d];
        let eligible = n.queue.iter().filter(|m| m.may_visit(from)).count();
        let cap = capacity(h.rssi);
        if eligible == 0 || cap <= 0.0 {
            return None;
        }
        let mine = self.metric(d, t);
        match self.rule {
            Rule::Baseline => None,
            Rule::Greedy => {
                let link = self.bits(n.queue.len()) / cap;
                (mine > h.metric + link).then_some((eligible.min(BUNDLE), h.metric + link))
            }
            Rule::Backpressure => {
                let qy = h.qlen?;
                let qx = n.queue.len();
                let (px, py) = (phi(mine), phi(h.metric));
                let w = qx as f64 / px - qy as f64 / py;
                if w <= 0.0 {
                    return None;
                }
                let delta = (qx as f64 - qy as f64 * px / py).floor();
                if delta <= 0.0 {
                    return None;
                }
                let k = (delta as usize)
                    .min(BUNDLE)
                    .min(self.s.q_max.saturating_sub(qy))
                    .min(eligible);
                (k > 0).then_some((k, w))
            }
        }
    }

    fn send(&mut self, d: usize, t: u64, to: Option<usize>, count: usize) -> bool {
        let ids: Vec<u64> = self.nodes[d]
            .queue
            .iter()
            .filter(|m| to.is_none_or(|h| m.may_visit(h)))
            .take(count)
            .map(|m| m.id)
            .collect();
        if ids.is_empty() {
            return false;
        }
        let air = frame_ms(self.header_bytes() + ids.len() * self.s.message_bytes);
        if t + air > self.nodes[d].horizon {
            return false;
        }
        let metric = (self.metric(d, t) * 1000.0).round() / 1000.0;
        let qlen = (self.rule == Rule::Backpressure).then_some(self.nodes[d].queue.len());
        let me = self.pos(d, t);
        let mut hearers = Vec::new();
        if self.rule != Rule::Baseline {
            for o in 0..self.nodes.len() {
                if o == d || !self.active(o, t) {
                    continue;
                }
                let p = self.pos(o, t);
                let dist = ((me.0 - p.0).powi(2) + (me.1 - p.1).powi(2)).sqrt();
                let r = rssi(dist);
                if dist <= self.s.d2d_m && r >= RSSI_MIN {
                    hearers.push((o, r));
                }
            }
        }
        let mut gw_cap = 0.0;
        if to.is_none() {
            let g = self.s.gateway;
            let dist = ((me.0 - g.0).powi(2) + (me.1 - g.1).powi(2)).sqrt();
            let r = rssi(dist);
            if dist <= self.s.d2g_m && r >= RSSI_MIN {
                gw_cap = capacity(r);
            }
        }
        let n = &mut self.nodes[d];
        n.allowed_at = t + ((air as f64 / DUTY - 1e-6).ceil() as u64).max(air);
        let mut acked = false;
        if to.is_none() {
            if gw_cap > 0.0 {
                acked = true;
                n.failures = 0;
                n.pending = false;
            } else {
                n.failures += 1;
                n.pending = n.failures < ATTEMPTS;
            }
        }
        self.frames += 1;
        let n = &mut self.nodes[d];
        n.on_air = Some(Frame {
            order: self.frames,
            start: t,
            end: t + air,
            to,
            ids,
            acked,
            gw_cap,
            hearers,
            metric,
            qlen,
        });
        true
    }

    fn attempt(&mut self, d: usize, t: u64) {
        if !self.active(d, t) || self.nodes[d].on_air.is_some() {
            return;
        }
        let uplink = self.nodes[d].pending && !self.nodes[d].queue.is_empty();
        if !self.nodes[d].wants_relay && !uplink {
            return;
        }
        if t < self.nodes[d].allowed_at {
            let at = self.nodes[d].allowed_at;
            let n = &mut self.nodes[d];
            if n.wake_at.is_none_or(|w| w > at) {
                n.wake_at = Some(at);
            }
            return;
        }
        if self.nodes[d].wants_relay {
            self.nodes[d].wants_relay = false;
            let period = self.s.period_s * 1000;
            let mut best: Option<(usize, usize, f64)> = None;
            let heard: Vec<(usize, Header)> = self.nodes[d].heard.iter().map(|(k, v)| (*k, *v)).collect();
            for (from, h) in heard {
                if t - h.at > period || !self.active(from, t) {
                    continue;
                }
                if let Some((k, score)) = self.offer(d, t, from, &h) {
                    let better = match best {
                        None => true,
                        Some((_, _, b)) if self.rule == Rule::Backpressure => score > b,
                        Some((_, _, b)) => score < b,
                    };
                    if better {
                        best = Some((from, k, score));
                    }
                }
            }
            if let Some((to, k, _)) = best {
                if self.send(d, t, Some(to), k) {
                    return;
                }
            }
        }
        if uplink {
            self.send(d, t, None, BUNDLE);
        }
    }

    fn generate(&mut self, d: usize, t: u64) {
        let period = self.s.period_s * 1000;
        let id = self.next_id;
        self.next_id += 1;
        let q_max = self.s.q_max;
        let n = &mut self.nodes[d];
        if n.queue.len() < q_max {
            n.queue.push(Msg {
                id,
                origin: d,
                created: t,
                trail: vec![d],
            });
        }
        n.failures = 0;
        n.pending = true;
        n.next_gen = (t + period <= n.horizon).then_some(t + period);
        let sample = self.service_sample(d, t);
        self.nodes[d].samples.push(sample);
        self.attempt(d, t);
    }

    fn frame_end(&mut self, d: usize, e: u64) {
        let f = self.nodes[d].on_air.take().expect("frame on air");
        self.nodes[d].sent.push((f.start, f.end));
        match f.to {
            None => {
                let cap = if f.acked { f.gw_cap } else { 0.0 };
                let n = &mut self.nodes[d];
                if f.acked {
                    let (gone, keep): (Vec<Msg>, Vec<Msg>) = n.queue.drain(..).partition(|m| f.ids.contains(&m.id));
                    n.queue = keep;
                    for m in gone {
                        self.out.push(Delivery {
                            id: m.id,
                            origin: m.origin,
                            created_ms: m.created,
                            delivered_ms: e,
                            trail: m.trail,
                        });
                    }
                }
                let n = &mut self.nodes[d];
                if cap > 0.0 {
                    n.contact_end = Some(e);
                    n.contact_cap = cap;
                }
                n.prev_cap = Some(cap);
            }
            Some(to) => {
                if self.active(to, e) && self.heard_whole(to, f.start, e) && f.hearers.iter().any(|(r, _)| *r == to) {
                    let k = f.ids.len().min(self.s.q_max - self.nodes[to].queue.len());
                    let taken = &f.ids[f.ids.len() - k..];
                    let n = &mut self.nodes[d];
                    let (mut moved, keep): (Vec<Msg>, Vec<Msg>) =
                        n.queue.drain(..).partition(|m| taken.contains(&m.id));
                    n.queue = keep;
                    for m in &mut moved {
                        m.trail.push(to);
                    }
                    self.nodes[to].queue.extend(moved);
                }
            }
        }
        for &(r, rs) in &f.hearers {
            if !self.active(r, e) || !self.heard_whole(r, f.start, e) {
                continue;
            }
            let h = Header {
                at: e,
                metric: f.metric,
                qlen: f.qlen,
                rssi: rs,
            };
            self.nodes[r].heard.insert(d, h);
            if self.offer(r, e, d, &h).is_some() {
                self.nodes[r].wants_relay = true;
                self.attempt(r, e);
            }
        }
        self.attempt(d, e);
    }
}

/// Step through the script one millisecond at a time and return every
/// delivery, ordered by message id, or the first ambiguous millisecond.
pub fn step_through(s: &Script, rule: Rule) -> Result<Vec<Delivery>, u64> {
    let end = s.end_s * 1000;
    let period = s.period_s * 1000;
    let nodes = s
        .devices
        .iter()
        .map(|w| {
            let appear = (w[0].0 * 1000.0).round() as u64;
            let horizon = ((w[w.len() - 1].0 * 1000.0).round() as u64).min(end);
            Node {
                appear,
                horizon,
                next_gen: (appear + period <= horizon).then_some(appear + period),
                ..Node::default()
            }
        })
        .collect();
    let mut w = World {
        s,
        rule,
        nodes,
        next_id: 0,
        frames: 0,
        out: Vec::new(),
    };
    for t in 0..=end {
        let mut ends: Vec<(u64, usize)> = (0..w.nodes.len())
            .filter_map(|d| w.nodes[d].on_air.as_ref().filter(|f| f.end == t).map(|f| (f.order, d)))
            .collect();
        ends.sort();
        let gens: Vec<usize> = (0..w.nodes.len()).filter(|&d| w.nodes[d].next_gen == Some(t)).collect();
        let wakes: Vec<usize> = (0..w.nodes.len()).filter(|&d| w.nodes[d].wake_at == Some(t)).collect();
        if ends.len().min(1) + gens.len() + wakes.len() > 1 {
            return Err(t);
        }
        for (_, d) in ends {
            w.frame_end(d, t);
        }
        for d in gens {
            w.generate(d, t);
        }
        for d in wakes {
            w.nodes[d].wake_at = None;
            w.attempt(d, t);
        }
    }
    w.out.sort_by_key(|d| d.id);
    Ok(w.out)
}
