//! Scenario configuration (TOML).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::ChannelConfig;
use crate::error::{Error, Result};
use crate::forwarding::{DataPacket, RobcConfig, Scheme, BUNDLE_LIMIT};
use crate::mac::{MacConfig, MAX_PAYLOAD_BYTES};
use crate::mobility::{Area, Point, SyntheticRouteSpec};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GatewayLayout {
    #[default]
    UniformGrid,
    ExplicitCoordinates,
}

/// Where device positions come from: a trace file or synthetic routes.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MobilitySource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub traces: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub routes: Vec<SyntheticRouteSpec>,
}

fn default_name() -> String {
    "scenario".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub area: Area,
    pub gateway_count: u32,
    #[serde(default)]
    pub gateway_layout: GatewayLayout,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gateway_positions: Vec<Point>,
    pub scheme: Scheme,
    pub duration_s: u64,
    pub seed: u64,
    /// Message generation and uplink interval.
    pub message_period_s: u64,
    pub message_size_bytes: u16,
    pub alpha: f64,
    pub q_max: usize,
    /// Node-to-sink metric before any uplink history; defaults to one
    /// interval plus a full bundle's time on a maximum-capacity link.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_s: Option<f64>,
    #[serde(default)]
    pub channel: ChannelConfig,
    #[serde(default)]
    pub mac: MacConfig,
    #[serde(default)]
    pub robc: RobcConfig,
    pub mobility: MobilitySource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            name: default_name(),
            area: Area {
                width_m: 6000.0,
                height_m: 6000.0,
            },
            gateway_count: 4,
            gateway_layout: GatewayLayout::UniformGrid,
            gateway_positions: Vec::new(),
            scheme: Scheme::NoRouting,
            duration_s: 86_400,
            seed: 1,
            message_period_s: 180,
            message_size_bytes: 20,
            alpha: 0.5,
            q_max: 1000,
            prior_s: None,
            channel: ChannelConfig::default(),
            mac: MacConfig::default(),
            robc: RobcConfig::default(),
            mobility: MobilitySource::default(),
            output_dir: None,
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            what: "scenario config".into(),
            message: e.to_string(),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// Load from a file; a relative trace path is resolved against the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(tr) = cfg.mobility.traces.as_mut() {
            if tr.is_relative() {
                if let Some(dir) = path.parent() {
                    *tr = dir.join(&*tr);
                }
            }
        }
        Ok(cfg)
    }

    pub fn full_bundle_bytes(&self) -> usize {
        DataPacket::size_for(self.scheme, BUNDLE_LIMIT, self.message_size_bytes as usize)
    }

    pub fn prior(&self) -> f64 {
        self.prior_s.unwrap_or_else(|| {
            self.message_period_s as f64 + (self.full_bundle_bytes() * 8) as f64 / self.channel.c_max_bps
        })
    }

    /// Every problem found, one line each.
    pub fn validation_errors(&self) -> Vec<String> {
        let mut e = self.model_errors();
        match (&self.mobility.traces, self.mobility.routes.is_empty()) {
            (Some(_), false) => e.push("mobility: give either traces or routes, not both".into()),
            (None, true) => e.push("mobility: traces or routes required".into()),
            _ => {}
        }
        for r in &self.mobility.routes {
            if let Err(err) = r.validate() {
                e.push(format!("mobility.routes: {err}"));
            }
            if r.waypoints.iter().any(|p| !self.area.contains(p)) {
                e.push(format!("mobility.routes: route {} leaves the area", r.name));
            }
        }
        e
    }

    /// Problems in everything but the mobility source.
    pub fn model_errors(&self) -> Vec<String> {
        let mut e = Vec::new();
        if !(self.area.width_m > 0.0 && self.area.height_m > 0.0) {
            e.push("area: width_m and height_m must be positive".into());
        }
        match self.gateway_layout {
            GatewayLayout::UniformGrid if self.gateway_count == 0 => e.push("gateway_count: must be at least 1".into()),
            GatewayLayout::ExplicitCoordinates => {
                if self.gateway_positions.is_empty() {
                    e.push("gateway_positions: explicit layout needs coordinates".into());
                }
                if self.gateway_positions.iter().any(|p| !self.area.contains(p)) {
                    e.push("gateway_positions: coordinates must lie inside the area".into());
                }
            }
            _ => {}
        }
        if self.duration_s == 0 {
            e.push("duration_s: must be positive".into());
        }
        if self.message_period_s == 0 {
            e.push("message_period_s: must be positive".into());
        }
        if self.message_size_bytes == 0 {
            e.push("message_size_bytes: must be positive".into());
        } else if self.full_bundle_bytes() > MAX_PAYLOAD_BYTES {
            e.push(format!(
                "message_size_bytes: a full bundle of {BUNDLE_LIMIT} would be {} bytes (max {MAX_PAYLOAD_BYTES})",
                self.full_bundle_bytes()
            ));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            e.push("alpha: must be in (0, 1]".into());
        }
        if self.q_max == 0 {
            e.push("q_max: must be positive".into());
        }
        if let Some(p) = self.prior_s {
            if !(p >= 0.0 && p.is_finite()) {
                e.push("prior_s: must be a finite non-negative number".into());
            }
        }
        self.channel.validate(&mut e);
        self.mac.validate(&mut e);
        self.robc.validate(&mut e);
        e
    }

    pub fn validate(&self) -> Result<()> {
        into_result(self.validation_errors())
    }

    pub fn validate_model(&self) -> Result<()> {
        into_result(self.model_errors())
    }
}

fn into_result(errors: Vec<String>) -> Result<()> {
    if errors.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(errors))
    }
}
