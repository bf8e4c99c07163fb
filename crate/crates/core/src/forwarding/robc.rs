//! Queue-differential backpressure weights.

use serde::{Deserialize, Serialize};

/// Bounds on the gateway-quality rate `phi = 1 / metric`, in 1/s.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobcConfig {
    pub phi_min: f64,
    pub phi_max: f64,
}

impl Default for RobcConfig {
    fn default() -> Self {
        RobcConfig {
            phi_min: 1.0 / 86_400.0,
            phi_max: 1.0 / 0.01,
        }
    }
}

impl RobcConfig {
    pub fn validate(&self, errors: &mut Vec<String>) {
        if !(self.phi_min > 0.0 && self.phi_min <= self.phi_max && self.phi_max.is_finite()) {
            errors.push("robc: need 0 < phi_min <= phi_max < inf".into());
        }
    }

    /// Gateway quality of a device advertising `metric_s`, clamped.
    pub fn rgq(&self, metric_s: f64) -> f64 {
        let phi = if metric_s > 0.0 { 1.0 / metric_s } else { f64::INFINITY };
        phi.clamp(self.phi_min, self.phi_max)
    }
}

/// `q_x / phi_x - q_y / phi_y`; positive means `x` should push data to `y`.
pub fn robc_weight(q_x: usize, phi_x: f64, q_y: usize, phi_y: f64) -> f64 {
    q_x as f64 / phi_x - q_y as f64 / phi_y
}

/// Whole messages to move from `x` to `y`: `q_x - q_y * phi_x / phi_y`
/// floored, then capped by the bundle limit and the receiver's free space.
pub fn robc_transfer_amount(
    q_x: usize,
    phi_x: f64,
    q_y: usize,
    phi_y: f64,
    bundle_limit: usize,
    receiver_free: usize,
) -> usize {
    if robc_weight(q_x, phi_x, q_y, phi_y) <= 0.0 {
        return 0;
    }
    let delta = (q_x as f64 - q_y as f64 * phi_x / phi_y).floor();
    if delta <= 0.0 {
        return 0;
    }
    (delta as usize).min(bundle_limit).min(receiver_free)
}
