//! Forwarding schemes and the decisions a device takes when it overhears a
//! neighbour's frame.

pub mod message;
pub mod metric;
pub mod queue;
pub mod robc;

use serde::{Deserialize, Serialize};

use crate::channel::{link_capacity, ChannelConfig};
use crate::engine::SimTime;
use crate::DeviceId;

pub use message::{DataPacket, Message, MessageId, BUNDLE_LIMIT};
pub use metric::{ewma_step, node_to_node_rca_etx, rca_etx_forward_decision, ContactTracker, MetricError, RpstSample};
pub use queue::{DeviceQueue, QueueError, QueueUpdate};
pub use robc::{robc_transfer_amount, robc_weight, RobcConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scheme {
    /// Queue locally, upload only to gateways.
    #[default]
    #[serde(rename = "norouting")]
    NoRouting,
    /// Greedy hand-over to a neighbour with a smaller end-to-end delay metric.
    #[serde(rename = "rca-etx")]
    RcaEtx,
    /// Backpressure hand-over weighted by gateway quality.
    #[serde(rename = "robc")]
    Robc,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::NoRouting, Scheme::RcaEtx, Scheme::Robc];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::NoRouting => "norouting",
            Scheme::RcaEtx => "rca-etx",
            Scheme::Robc => "robc",
        }
    }

    pub fn forwards(self) -> bool {
        self != Scheme::NoRouting
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scheme::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown scheme {s:?} (expected norouting, rca-etx or robc)"))
    }
}

/// What a device retains from an overheard frame header.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeardHeader {
    pub from: DeviceId,
    pub at: SimTime,
    pub rca_etx_s: f64,
    pub queue_len: Option<usize>,
    pub rssi_dbm: f64,
}

impl HeardHeader {
    pub fn is_fresh(&self, now: SimTime, max_age: SimTime) -> bool {
        now.saturating_sub(self.at) <= max_age
    }
}

/// The overhearing device's own state, as far as a decision needs it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalView {
    pub metric_s: f64,
    pub queue_len: usize,
    /// Messages that may be handed to this particular neighbour.
    pub eligible: usize,
    pub bundle_bits: f64,
    pub q_max: usize,
}

/// A hand-over a device wants to make.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelayPlan {
    pub to: DeviceId,
    pub count: usize,
    /// RCA-ETX: neighbour metric + link metric (smaller wins).
    /// ROBC: backpressure weight (larger wins).
    pub score: f64,
}

/// Decide whether overhearing `header` should trigger a hand-over.
pub fn on_overhear(
    scheme: Scheme,
    local: &LocalView,
    header: &HeardHeader,
    channel: &ChannelConfig,
    robc: &RobcConfig,
) -> Option<RelayPlan> {
    if local.eligible == 0 || link_capacity(header.rssi_dbm, channel) <= 0.0 {
        return None;
    }
    match scheme {
        Scheme::NoRouting => None,
        Scheme::RcaEtx => {
            let link = node_to_node_rca_etx(header.rssi_dbm, channel, local.bundle_bits);
            if !rca_etx_forward_decision(local.metric_s, header.rca_etx_s, link) {
                return None;
            }
            Some(RelayPlan {
                to: header.from,
                count: local.eligible.min(BUNDLE_LIMIT),
                score: header.rca_etx_s + link,
            })
        }
        Scheme::Robc => {
            let q_y = header.queue_len?;
            let phi_x = robc.rgq(local.metric_s);
            let phi_y = robc.rgq(header.rca_etx_s);
            let weight = robc_weight(local.queue_len, phi_x, q_y, phi_y);
            let amount = robc_transfer_amount(
                local.queue_len,
                phi_x,
                q_y,
                phi_y,
                BUNDLE_LIMIT,
                local.q_max.saturating_sub(q_y),
            )
            .min(local.eligible);
            (amount > 0).then_some(RelayPlan {
                to: header.from,
                count: amount,
                score: weight,
            })
        }
    }
}

/// Best plan among several qualifying neighbours; ties go to the lowest id.
pub fn pick_best(scheme: Scheme, plans: &[RelayPlan]) -> Option<RelayPlan> {
    plans.iter().copied().reduce(|best, p| {
        let better = match scheme {
            Scheme::Robc => p.score > best.score,
            _ => p.score < best.score,
        };
        let tie = p.score == best.score && p.to < best.to;
        if better || tie {
            p
        } else {
            best
        }
    })
}
