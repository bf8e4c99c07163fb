//! Delivery records and the per-run report: end-to-end delay, throughput
//! per 10-minute bin, hop counts and per-node transmission overhead.
//!
//! Two output files are produced per run, both carrying `format_version`:
//!
//! * `summary.toml`: one `key = value` line per report field. Statistics
//!   that have no samples are written as the string `"undefined"`.
//! * `throughput.csv`: a `# format_version = N` comment, the header
//!   `bin_start_s,delivered_count`, then one row per bin.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::{self, Write};

use thiserror::Error;

use crate::engine::SimTime;
use crate::forwarding::{Message, MessageId};
use crate::DeviceId;

pub const FORMAT_VERSION: u32 = 1;
pub const BIN_S: u64 = 600;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("message {0:?} delivered twice")]
    DuplicateDelivery(MessageId),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeliveryRecord {
    pub message_id: MessageId,
    pub origin: DeviceId,
    pub t_d: SimTime,
    pub t_g: SimTime,
    pub hops: usize,
    pub relay_path: Vec<DeviceId>,
}

impl DeliveryRecord {
    pub fn delay_s(&self) -> f64 {
        (self.t_g - self.t_d).as_secs_f64()
    }
}

#[derive(Debug, Default)]
pub struct MetricsCollector {
    records: Vec<DeliveryRecord>,
    delivered: HashSet<MessageId>,
}

impl MetricsCollector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Record arrival of `msg` at the server at `t`.
    pub fn record_delivery(&mut self, msg: &Message, t: SimTime) -> Result<(), MetricsError> {
        if !self.delivered.insert(msg.id) {
            return Err(MetricsError::DuplicateDelivery(msg.id));
        }
        debug_assert!(t >= msg.created_at);
        self.records.push(DeliveryRecord {
            message_id: msg.id,
            origin: msg.origin,
            t_d: msg.created_at,
            t_g: t,
            hops: msg.hop_trail.len(),
            relay_path: msg.hop_trail.clone(),
        });
        Ok(())
    }

    pub fn records(&self) -> &[DeliveryRecord] {
        &self.records
    }

    pub fn delivered(&self) -> usize {
        self.records.len()
    }
}

/// Run-wide counters gathered by the simulator.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunTotals {
    pub node_count: usize,
    pub generated: u64,
    pub residual_queued: u64,
    pub drops: u64,
    pub tx_frames: u64,
    pub uplink_frames: u64,
    pub relay_frames: u64,
    pub listen_time_s: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub duration_s: u64,
    pub node_count: usize,
    pub generated: u64,
    pub total_delivered: u64,
    pub residual_queued: u64,
    pub drops: u64,
    pub mean_delay_s: Option<f64>,
    pub delay_stddev_s: Option<f64>,
    pub delay_stderr_s: Option<f64>,
    pub mean_hops: Option<f64>,
    pub max_hops: usize,
    /// Frames (uplinks, retries and relays) per device.
    pub messages_sent_per_node: f64,
    pub uplinks_per_node: f64,
    pub relays_per_node: f64,
    pub overhead_ratio_vs_baseline: Option<f64>,
    pub listen_time_per_node_s: f64,
    pub throughput_series: Vec<u64>,
}

fn per_node(total: f64, nodes: usize) -> f64 {
    if nodes == 0 {
        0.0
    } else {
        total / nodes as f64
    }
}

/// Aggregate delivery records into a report. Delay statistics cover
/// delivered messages only.
pub fn finalize(records: &[DeliveryRecord], totals: &RunTotals, duration: SimTime) -> MetricsReport {
    let n = records.len();
    let delays: Vec<f64> = records.iter().map(DeliveryRecord::delay_s).collect();
    let mean = (n > 0).then(|| delays.iter().sum::<f64>() / n as f64);
    let stddev = mean
        .filter(|_| n > 1)
        .map(|m| (delays.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt());
    let stderr = stddev.map(|s| s / (n as f64).sqrt());
    let mean_hops = (n > 0).then(|| records.iter().map(|r| r.hops).sum::<usize>() as f64 / n as f64);

    let bin_ms = BIN_S * 1000;
    let bins = duration.as_millis().div_ceil(bin_ms) as usize;
    let mut series = vec![0u64; bins];
    for r in records {
        if bins == 0 {
            break;
        }
        let idx = ((r.t_g.as_millis() / bin_ms) as usize).min(bins - 1);
        series[idx] += 1;
    }

    let nodes = totals.node_count;
    MetricsReport {
        duration_s: duration.as_millis() / 1000,
        node_count: nodes,
        generated: totals.generated,
        total_delivered: n as u64,
        residual_queued: totals.residual_queued,
        drops: totals.drops,
        mean_delay_s: mean,
        delay_stddev_s: stddev,
        delay_stderr_s: stderr,
        mean_hops,
        max_hops: records.iter().map(|r| r.hops).max().unwrap_or(0),
        messages_sent_per_node: per_node(totals.tx_frames as f64, nodes),
        uplinks_per_node: per_node(totals.uplink_frames as f64, nodes),
        relays_per_node: per_node(totals.relay_frames as f64, nodes),
        overhead_ratio_vs_baseline: None,
        listen_time_per_node_s: per_node(totals.listen_time_s, nodes),
        throughput_series: series,
    }
}

/// Ratio of frames per node against a paired baseline run.
pub fn overhead_ratio(scheme: &MetricsReport, baseline: &MetricsReport) -> Option<f64> {
    (baseline.messages_sent_per_node > 0.0).then(|| scheme.messages_sent_per_node / baseline.messages_sent_per_node)
}

fn opt(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:?}"),
        _ => "\"undefined\"".to_string(),
    }
}

impl MetricsReport {
    pub fn conservation_holds(&self) -> bool {
        self.generated == self.total_delivered + self.residual_queued + self.drops
    }

    pub fn summary_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "format_version = {FORMAT_VERSION}");
        let _ = writeln!(s, "duration_s = {}", self.duration_s);
        let _ = writeln!(s, "node_count = {}", self.node_count);
        let _ = writeln!(s, "generated = {}", self.generated);
        let _ = writeln!(s, "total_delivered = {}", self.total_delivered);
        let _ = writeln!(s, "residual_queued = {}", self.residual_queued);
        let _ = writeln!(s, "drops = {}", self.drops);
        let _ = writeln!(s, "mean_delay_s = {}", opt(self.mean_delay_s));
        let _ = writeln!(s, "delay_stddev_s = {}", opt(self.delay_stddev_s));
        let _ = writeln!(s, "delay_stderr_s = {}", opt(self.delay_stderr_s));
        let _ = writeln!(s, "mean_hops = {}", opt(self.mean_hops));
        let _ = writeln!(s, "max_hops = {}", self.max_hops);
        let _ = writeln!(s, "messages_sent_per_node = {:?}", self.messages_sent_per_node);
        let _ = writeln!(s, "uplinks_per_node = {:?}", self.uplinks_per_node);
        let _ = writeln!(s, "relays_per_node = {:?}", self.relays_per_node);
        let _ = writeln!(
            s,
            "overhead_ratio_vs_baseline = {}",
            opt(self.overhead_ratio_vs_baseline)
        );
        let _ = writeln!(s, "listen_time_per_node_s = {:?}", self.listen_time_per_node_s);
        let _ = writeln!(s, "throughput_bin_s = {BIN_S}");
        let _ = writeln!(s, "throughput_bins = {}", self.throughput_series.len());
        s
    }

    pub fn write_summary<W: Write>(&self, mut out: W) -> io::Result<()> {
        out.write_all(self.summary_text().as_bytes())
    }

    pub fn write_throughput<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "# format_version = {FORMAT_VERSION}")?;
        writeln!(out, "bin_start_s,delivered_count")?;
        for (i, c) in self.throughput_series.iter().enumerate() {
            writeln!(out, "{},{}", i as u64 * BIN_S, c)?;
        }
        Ok(())
    }
}
