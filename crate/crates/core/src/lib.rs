//! Trace-driven discrete-event simulation of mobile LoRaWAN devices that
//! forward data opportunistically to peers before reaching static gateways.
//!
//! Three schemes are compared: a queued baseline without forwarding, greedy
//! forwarding on the RCA-ETX delay metric, and queue-differential (ROBC)
//! backpressure forwarding.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod config;
pub mod engine;
pub mod error;
pub mod forwarding;
pub mod mac;
pub mod metrics;
pub mod mobility;
pub mod scenario;
pub mod sim;
pub mod sweep;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use config::ScenarioConfig;
pub use engine::SimTime;
pub use error::{Error, Result};
pub use forwarding::Scheme;
pub use metrics::MetricsReport;

/// Dense index of a mobile device within one run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DeviceId(pub u32);

impl DeviceId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "d{}", self.0)
    }
}
