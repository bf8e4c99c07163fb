//! Delay-flavoured link metrics.
//!
//! The node-to-sink metric is a smoothed real-time packet service time
//! (RPST): the expected time until a packet from this device reaches a
//! gateway. When the device was in gateway contact at its previous uplink,
//!
//! ```text
//! rpst = bits / c_prev + t_wait
//! ```
//!
//! otherwise the elapsed time since the end of the last contact stands in for
//! the unknown time to the next one:
//!
//! ```text
//! rpst = bits / c_last_success + (t - t_contact_end) + t_wait
//! ```
//!
//! `t_wait` is the time until the device may broadcast again. Samples are
//! folded into an exponentially weighted moving average once per uplink slot.
//!
//! The node-to-node metric is simply the transmission time of the current
//! bundle over the RSSI-derived capacity.

use thiserror::Error;

use crate::channel::{link_capacity, ChannelConfig};
use crate::engine::SimTime;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("negative packet service time sample {0}")]
    NegativeSample(f64),
}

/// One EWMA step. `prev == None` is the first sample.
pub fn ewma_step(prev: Option<f64>, current: f64, alpha: f64) -> Result<f64, MetricError> {
    if !(current >= 0.0) {
        return Err(MetricError::NegativeSample(current));
    }
    Ok(match prev {
        None => current,
        Some(p) => (1.0 - alpha) * p + alpha * current,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RpstSample {
    pub seconds: f64,
    /// No uplink history yet; the configured prior was returned.
    pub from_prior: bool,
}

/// Gateway-contact history and smoothed metric of one device.
#[derive(Clone, Debug, PartialEq)]
pub struct ContactTracker {
    pub last_contact_start: Option<SimTime>,
    pub last_contact_end: Option<SimTime>,
    pub capacity_at_last_success: f64,
    pub capacity_at_prev_slot: Option<f64>,
    pub alpha: f64,
    pub prior_s: f64,
    smoothed: Option<f64>,
    before_last_slot: Option<f64>,
    slots: u64,
}

impl ContactTracker {
    pub fn new(alpha: f64, prior_s: f64) -> Self {
        ContactTracker {
            last_contact_start: None,
            last_contact_end: None,
            capacity_at_last_success: 0.0,
            capacity_at_prev_slot: None,
            alpha,
            prior_s,
            smoothed: None,
            before_last_slot: None,
            slots: 0,
        }
    }

    /// Record the gateway capacity seen by an uplink at `t`; zero means the
    /// uplink was not received.
    pub fn record_uplink(&mut self, t: SimTime, capacity_bps: f64) {
        if capacity_bps > 0.0 {
            let was_in_contact = self.capacity_at_prev_slot.is_some_and(|c| c > 0.0);
            if !was_in_contact {
                self.last_contact_start = Some(t);
            }
            self.last_contact_end = Some(t);
            self.capacity_at_last_success = capacity_bps;
        }
        self.capacity_at_prev_slot = Some(capacity_bps);
    }

    pub fn rpst(&self, t: SimTime, t_wait_s: f64, packet_bits: f64) -> RpstSample {
        if let Some(c) = self.capacity_at_prev_slot.filter(|c| *c > 0.0) {
            return RpstSample {
                seconds: packet_bits / c + t_wait_s,
                from_prior: false,
            };
        }
        match self.last_contact_end {
            Some(end) => RpstSample {
                seconds: packet_bits / self.capacity_at_last_success + t.saturating_sub(end).as_secs_f64() + t_wait_s,
                from_prior: false,
            },
            None => RpstSample {
                seconds: self.prior_s,
                from_prior: true,
            },
        }
    }

    /// Fold one slot's RPST sample into the average.
    pub fn update_ewma(&mut self, current: f64) -> Result<f64, MetricError> {
        let next = ewma_step(self.smoothed, current, self.alpha)?;
        self.before_last_slot = self.smoothed;
        self.smoothed = Some(next);
        self.slots += 1;
        Ok(next)
    }

    /// Slot update: sample the RPST at `t` and fold it in.
    pub fn commit_slot(&mut self, t: SimTime, t_wait_s: f64, packet_bits: f64) -> f64 {
        let sample = self.rpst(t, t_wait_s, packet_bits).seconds;
        self.update_ewma(sample).expect("rpst is non-negative")
    }

    /// Node-to-sink metric at `t`: the most recent slot's sample is replaced
    /// by the RPST at `t`. Equals the committed average at slot instants.
    pub fn node_to_sink(&self, t: SimTime, t_wait_s: f64, packet_bits: f64) -> f64 {
        let sample = self.rpst(t, t_wait_s, packet_bits).seconds;
        ewma_step(self.before_last_slot, sample, self.alpha).expect("rpst is non-negative")
    }

    pub fn smoothed(&self) -> Option<f64> {
        self.smoothed
    }

    pub fn slots(&self) -> u64 {
        self.slots
    }
}

/// Transmission time of `packet_bits` over a link heard at `rssi_dbm`;
/// infinite when the link has no capacity.
pub fn node_to_node_rca_etx(rssi_dbm: f64, cfg: &ChannelConfig, packet_bits: f64) -> f64 {
    let c = link_capacity(rssi_dbm, cfg);
    if c > 0.0 {
        packet_bits / c
    } else {
        f64::INFINITY
    }
}

/// Hand data to the neighbour only when going through it is strictly faster.
pub fn rca_etx_forward_decision(self_metric: f64, neighbor_metric: f64, link_metric: f64) -> bool {
    self_metric > neighbor_metric + link_metric
}
