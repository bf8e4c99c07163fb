//! Pairwise radio model: log-distance path loss with log-normal shadowing,
//! range/sensitivity contact test and the piecewise-linear RSSI to capacity map.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::mobility::Point;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub path_loss_exponent: f64,
    pub reference_loss_db: f64,
    pub reference_distance_m: f64,
    pub shadowing_sigma_db: f64,
    pub tx_power_dbm: f64,
    pub d2d_range_m: f64,
    pub d2g_range_m: f64,
    pub rssi_min_dbm: f64,
    pub rssi_max_dbm: f64,
    pub c_max_bps: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            path_loss_exponent: 2.32,
            reference_loss_db: 87.41,
            reference_distance_m: 40.0,
            shadowing_sigma_db: 0.0,
            tx_power_dbm: 14.0,
            d2d_range_m: 500.0,
            d2g_range_m: 1000.0,
            rssi_min_dbm: -123.0,
            rssi_max_dbm: -60.0,
            c_max_bps: 5470.0,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self, errors: &mut Vec<String>) {
        let mut need = |ok: bool, msg: &str| {
            if !ok {
                errors.push(format!("channel.{msg}"));
            }
        };
        need(self.path_loss_exponent > 0.0, "path_loss_exponent must be positive");
        need(self.reference_distance_m > 0.0, "reference_distance_m must be positive");
        need(
            self.shadowing_sigma_db >= 0.0,
            "shadowing_sigma_db must be non-negative",
        );
        need(self.d2d_range_m > 0.0, "d2d_range_m must be positive");
        need(self.d2g_range_m > 0.0, "d2g_range_m must be positive");
        need(
            self.rssi_max_dbm > self.rssi_min_dbm,
            "rssi_max_dbm must exceed rssi_min_dbm",
        );
        need(self.c_max_bps > 0.0, "c_max_bps must be positive");
    }

    /// Received power without shadowing. Distances below the reference
    /// distance are clamped to it.
    pub fn mean_rssi(&self, distance_m: f64) -> f64 {
        let d = distance_m.max(self.reference_distance_m);
        self.tx_power_dbm
            - (self.reference_loss_db + 10.0 * self.path_loss_exponent * (d / self.reference_distance_m).log10())
    }

    /// Received power with one shadowing draw.
    pub fn rssi<R: Rng + ?Sized>(&self, distance_m: f64, rng: &mut R) -> f64 {
        let mean = self.mean_rssi(distance_m);
        if self.shadowing_sigma_db > 0.0 {
            let n = Normal::new(0.0, self.shadowing_sigma_db).expect("sigma validated");
            mean - n.sample(rng)
        } else {
            mean
        }
    }

    pub fn range(&self, kind: LinkKind) -> f64 {
        match kind {
            LinkKind::DeviceToDevice => self.d2d_range_m,
            LinkKind::DeviceToGateway => self.d2g_range_m,
        }
    }
}

/// Capacity in bits/s for a received power. Zero below the floor, `c_max`
/// above the ceiling, linear in between.
pub fn link_capacity(rssi_dbm: f64, cfg: &ChannelConfig) -> f64 {
    if rssi_dbm < cfg.rssi_min_dbm {
        0.0
    } else if rssi_dbm > cfg.rssi_max_dbm {
        cfg.c_max_bps
    } else {
        cfg.c_max_bps * (rssi_dbm - cfg.rssi_min_dbm) / (cfg.rssi_max_dbm - cfg.rssi_min_dbm)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LinkKind {
    DeviceToDevice,
    DeviceToGateway,
}

pub fn contact(kind: LinkKind, distance_m: f64, rssi_dbm: f64, cfg: &ChannelConfig) -> bool {
    distance_m <= cfg.range(kind) && rssi_dbm >= cfg.rssi_min_dbm
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelSample {
    pub rssi_dbm: f64,
    pub capacity_bps: f64,
    pub in_contact: bool,
    pub distance_m: f64,
}

impl ChannelSample {
    /// Evaluate one link. Links beyond range are reported out of contact
    /// without consuming a shadowing draw.
    pub fn evaluate<R: Rng + ?Sized>(
        kind: LinkKind,
        a: &Point,
        b: &Point,
        cfg: &ChannelConfig,
        rng: &mut R,
    ) -> ChannelSample {
        let distance_m = a.distance(b);
        if distance_m > cfg.range(kind) {
            return ChannelSample {
                rssi_dbm: cfg.mean_rssi(distance_m),
                capacity_bps: 0.0,
                in_contact: false,
                distance_m,
            };
        }
        let rssi_dbm = cfg.rssi(distance_m, rng);
        let in_contact = contact(kind, distance_m, rssi_dbm, cfg);
        ChannelSample {
            rssi_dbm,
            capacity_bps: if in_contact { link_capacity(rssi_dbm, cfg) } else { 0.0 },
            in_contact,
            distance_m,
        }
    }
}

/// Indices of `others` in device-to-device contact with `me`. Entries equal to
/// `me_index` are skipped.
pub fn neighbors_in_contact<R: Rng + ?Sized>(
    me_index: usize,
    positions: &[Option<Point>],
    cfg: &ChannelConfig,
    rng: &mut R,
) -> Vec<usize> {
    let Some(me) = positions.get(me_index).copied().flatten() else {
        return Vec::new();
    };
    positions
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != me_index)
        .filter_map(|(i, p)| p.map(|p| (i, p)))
        .filter(|(_, p)| ChannelSample::evaluate(LinkKind::DeviceToDevice, &me, p, cfg, rng).in_contact)
        .map(|(i, _)| i)
        .collect()
}
