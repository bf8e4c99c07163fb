//! LoRa MAC: time-on-air, duty-cycle gating, uplink retries and receive
//! windows for the two overhearing device classes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::SimTime;

pub const MAX_PAYLOAD_BYTES: usize = 255;

#[derive(Debug, Error, PartialEq)]
pub enum MacError {
    #[error("payload of {0} bytes is outside 1..=255")]
    PayloadSize(usize),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeviceClass {
    /// Listens on the uplink channel whenever not transmitting.
    #[default]
    ModifiedClassC,
    /// Opens one receive window after each transmission, sized by backlog.
    QueueBasedClassA,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MacConfig {
    pub spreading_factor: u8,
    pub bandwidth_hz: f64,
    /// Coding rate 4/(4+n); 1 means 4/5.
    pub coding_rate: u8,
    pub preamble_symbols: u32,
    pub duty_cycle: f64,
    /// Transmission attempts per packet before holding until the next generation.
    pub max_retransmissions: u32,
    pub device_class: DeviceClass,
    /// Upper bound of the uniform delay added to deferred transmissions.
    pub retry_jitter_s: f64,
}

impl Default for MacConfig {
    fn default() -> Self {
        MacConfig {
            spreading_factor: 7,
            bandwidth_hz: 125_000.0,
            coding_rate: 1,
            preamble_symbols: 8,
            duty_cycle: 0.01,
            max_retransmissions: 8,
            device_class: DeviceClass::ModifiedClassC,
            retry_jitter_s: 1.0,
        }
    }
}

impl MacConfig {
    pub fn validate(&self, errors: &mut Vec<String>) {
        if !(7..=12).contains(&self.spreading_factor) {
            errors.push("mac.spreading_factor must be in 7..=12".into());
        }
        if !(self.bandwidth_hz > 0.0) {
            errors.push("mac.bandwidth_hz must be positive".into());
        }
        if !(1..=4).contains(&self.coding_rate) {
            errors.push("mac.coding_rate must be in 1..=4".into());
        }
        if !(self.duty_cycle > 0.0 && self.duty_cycle <= 1.0) {
            errors.push("mac.duty_cycle must be in (0, 1]".into());
        }
        if self.max_retransmissions < 1 {
            errors.push("mac.max_retransmissions must be at least 1".into());
        }
        if !(self.retry_jitter_s >= 0.0) {
            errors.push("mac.retry_jitter_s must be non-negative".into());
        }
    }

    pub fn symbol_time_s(&self) -> f64 {
        f64::from(1u32 << self.spreading_factor) / self.bandwidth_hz
    }

    fn low_data_rate_optimize(&self) -> bool {
        self.symbol_time_s() > 0.016
    }
}

/// Time on air of one frame in seconds (explicit header, CRC on).
pub fn airtime(payload_bytes: usize, cfg: &MacConfig) -> Result<f64, MacError> {
    if payload_bytes == 0 || payload_bytes > MAX_PAYLOAD_BYTES {
        return Err(MacError::PayloadSize(payload_bytes));
    }
    let t_sym = cfg.symbol_time_s();
    let sf = i64::from(cfg.spreading_factor);
    let de = i64::from(cfg.low_data_rate_optimize());
    let numerator = 8 * payload_bytes as i64 - 4 * sf + 28 + 16;
    let denominator = 4 * (sf - 2 * de);
    let blocks = (numerator + denominator - 1).div_euclid(denominator).max(0);
    let payload_symbols = 8 + blocks * (i64::from(cfg.coding_rate) + 4);
    let preamble = (f64::from(cfg.preamble_symbols) + 4.25) * t_sym;
    Ok(preamble + payload_symbols as f64 * t_sym)
}

/// Airtime rounded up to the millisecond grid.
pub fn airtime_ms(payload_bytes: usize, cfg: &MacConfig) -> Result<SimTime, MacError> {
    let s = airtime(payload_bytes, cfg)?;
    Ok(SimTime::from_millis((s * 1000.0 - 1e-9).ceil() as u64))
}

/// Minimum spacing between transmission starts, in seconds.
pub fn duty_cycle_release(tx_airtime_s: f64, duty_cycle: f64) -> f64 {
    tx_airtime_s / duty_cycle
}

/// Earliest start of the next transmission after one beginning at `start`.
pub fn release_time(start: SimTime, airtime: SimTime, duty_cycle: f64) -> SimTime {
    let gap = (airtime.as_millis() as f64 / duty_cycle - 1e-6).ceil() as u64;
    start + SimTime::from_millis(gap.max(airtime.as_millis()))
}

/// Receive-window fraction of the uplink interval for queue-based devices,
/// `phi_max * q / (phi * q_max)` capped at 1.
pub fn queue_window_fraction(phi_max: f64, queue_len: usize, phi: f64, q_max: usize) -> f64 {
    if queue_len == 0 {
        return 0.0;
    }
    (phi_max * queue_len as f64 / (phi * q_max as f64)).min(1.0)
}

/// Receive window opened after a transmission ending at `tx_end`.
/// `None` as the end means the device listens until its next transmission.
pub fn receive_window(
    class: DeviceClass,
    tx_end: SimTime,
    delta_t_s: f64,
    window_fraction: f64,
) -> Option<(SimTime, Option<SimTime>)> {
    match class {
        DeviceClass::ModifiedClassC => Some((tx_end, None)),
        DeviceClass::QueueBasedClassA => {
            let len = SimTime::from_secs_f64(delta_t_s * window_fraction);
            if len == SimTime::ZERO {
                None
            } else {
                Some((tx_end, Some(tx_end + len)))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UplinkOutcome {
    Acked,
    /// Not acknowledged; `retry` tells whether attempts remain for this packet.
    Failed {
        retry: bool,
    },
    BlockedByDutyCycle,
    NoPacket,
}

/// Per-device MAC bookkeeping.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MacState {
    pub next_tx_allowed: SimTime,
    pub retransmission_count: u32,
    pub uplink_pending: bool,
    pub transmitting: Option<(SimTime, SimTime)>,
    pub last_tx: Option<(SimTime, SimTime)>,
    listen_since: Option<SimTime>,
    listen_until: Option<SimTime>,
    pub listen_time: SimTime,
    pub airtime_total: SimTime,
    pub tx_count: u64,
    pub uplink_count: u64,
    pub relay_count: u64,
}

impl MacState {
    pub fn gate_open(&self, t: SimTime) -> bool {
        t >= self.next_tx_allowed && self.transmitting.is_none()
    }

    /// Close any open receive window at `t`, crediting the listened time.
    pub fn stop_listening(&mut self, t: SimTime) {
        if let Some(since) = self.listen_since.take() {
            let until = self.listen_until.take().map_or(t, |u| u.min(t));
            if until > since {
                self.listen_time = self.listen_time + (until - since);
            }
        }
        self.listen_until = None;
    }

    pub fn start_listening(&mut self, since: SimTime, until: Option<SimTime>) {
        self.stop_listening(since);
        self.listen_since = Some(since);
        self.listen_until = until;
    }

    pub fn is_listening(&self, t: SimTime) -> bool {
        matches!(self.listen_since, Some(s) if s <= t) && self.listen_until.is_none_or(|u| u >= t)
    }

    /// True when the receiver listened over the whole of `[start, end]`.
    pub fn heard_whole(&self, start: SimTime, end: SimTime) -> bool {
        let overlaps_own_tx = |(s, e): (SimTime, SimTime)| s < end && e > start;
        if self.transmitting.is_some_and(overlaps_own_tx) || self.last_tx.is_some_and(overlaps_own_tx) {
            return false;
        }
        matches!(self.listen_since, Some(s) if s <= start) && self.listen_until.is_none_or(|u| u >= end)
    }

    /// Start a transmission of `airtime` at `t`; returns its end time.
    pub fn begin_tx(&mut self, t: SimTime, airtime: SimTime, duty_cycle: f64) -> SimTime {
        debug_assert!(self.gate_open(t));
        self.stop_listening(t);
        let end = t + airtime;
        self.transmitting = Some((t, end));
        self.next_tx_allowed = release_time(t, airtime, duty_cycle);
        self.airtime_total = self.airtime_total + airtime;
        self.tx_count += 1;
        end
    }

    pub fn end_tx(&mut self) -> Option<(SimTime, SimTime)> {
        let tx = self.transmitting.take();
        if tx.is_some() {
            self.last_tx = tx;
        }
        tx
    }

    /// A fresh packet was generated: the retry budget starts over.
    pub fn reset_retries(&mut self) {
        self.retransmission_count = 0;
        self.uplink_pending = true;
    }

    /// Gate an uplink attempt and, if it goes on air, account for it.
    /// `gateway_reachable` decides the acknowledgement.
    pub fn attempt_uplink(
        &mut self,
        t: SimTime,
        has_packet: bool,
        gateway_reachable: bool,
        airtime: SimTime,
        cfg: &MacConfig,
    ) -> UplinkOutcome {
        if !has_packet {
            log::debug!("uplink attempt at {t} without a pending packet");
            return UplinkOutcome::NoPacket;
        }
        if !self.gate_open(t) {
            return UplinkOutcome::BlockedByDutyCycle;
        }
        self.begin_tx(t, airtime, cfg.duty_cycle);
        self.uplink_count += 1;
        if gateway_reachable {
            self.retransmission_count = 0;
            self.uplink_pending = false;
            UplinkOutcome::Acked
        } else {
            self.retransmission_count += 1;
            let retry = self.retransmission_count < cfg.max_retransmissions;
            self.uplink_pending = retry;
            UplinkOutcome::Failed { retry }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Straight transcription of the Semtech time-on-air formula, kept apart
    /// from the implementation above.
    fn reference_airtime(pl: f64, sf: f64, bw: f64, cr: f64, npre: f64) -> f64 {
        let tsym = 2f64.powf(sf) / bw;
        let tpre = (npre + 4.25) * tsym;
        let h = 0.0;
        let de = if tsym > 0.016 { 1.0 } else { 0.0 };
        let crc = 1.0;
        let inner = ((8.0 * pl - 4.0 * sf + 28.0 + 16.0 * crc - 20.0 * h) / (4.0 * (sf - 2.0 * de))).ceil();
        let npay = 8.0 + (inner * (cr + 4.0)).max(0.0);
        tpre + npay * tsym
    }

    #[test]
    fn sf7_symbol_time() {
        assert!((MacConfig::default().symbol_time_s() - 0.001024).abs() < 1e-15);
    }

    #[test]
    fn airtime_matches_reference_formula() {
        let cfg = MacConfig::default();
        let t51 = airtime(51, &cfg).unwrap();
        assert!((t51 - reference_airtime(51.0, 7.0, 125e3, 1.0, 8.0)).abs() < 1e-12);
        assert!((t51 - 0.102656).abs() < 1e-9, "{t51}");
        for pl in 1..=255 {
            let a = airtime(pl, &cfg).unwrap();
            assert!(
                (a - reference_airtime(pl as f64, 7.0, 125e3, 1.0, 8.0)).abs() < 1e-12,
                "pl {pl}"
            );
        }
        let sf12 = MacConfig {
            spreading_factor: 12,
            ..cfg
        };
        assert!((airtime(20, &sf12).unwrap() - reference_airtime(20.0, 12.0, 125e3, 1.0, 8.0)).abs() < 1e-12);
    }

    #[test]
    fn airtime_grows_with_payload() {
        let cfg = MacConfig::default();
        assert!(airtime(20, &cfg).unwrap() < airtime(51, &cfg).unwrap());
    }

    #[test]
    fn oversize_payload_rejected() {
        let cfg = MacConfig::default();
        assert_eq!(airtime(256, &cfg), Err(MacError::PayloadSize(256)));
        assert_eq!(airtime(0, &cfg), Err(MacError::PayloadSize(0)));
        assert!(airtime(255, &cfg).is_ok());
    }

    #[test]
    fn duty_cycle_spacing() {
        assert!((duty_cycle_release(0.1, 0.01) - 10.0).abs() < 1e-12);
        assert_eq!(duty_cycle_release(0.1, 1.0), 0.1);
        let a = SimTime::from_millis(100);
        assert_eq!(release_time(SimTime::ZERO, a, 0.01), SimTime::from_secs(10));
        // full duty: next tx may start as soon as this one ends
        assert_eq!(release_time(SimTime::ZERO, a, 1.0), a);
    }

    #[test]
    fn back_to_back_sends_are_spaced() {
        let cfg = MacConfig::default();
        let mut m = MacState::default();
        let a = SimTime::from_millis(100);
        let t0 = SimTime::from_secs(5);
        assert_eq!(m.attempt_uplink(t0, true, true, a, &cfg), UplinkOutcome::Acked);
        m.end_tx();
        assert_eq!(
            m.attempt_uplink(t0 + SimTime::from_secs(9), true, true, a, &cfg),
            UplinkOutcome::BlockedByDutyCycle
        );
        assert_eq!(m.tx_count, 1);
        assert_eq!(m.airtime_total, a);
        assert_eq!(
            m.attempt_uplink(t0 + SimTime::from_secs(10), true, true, a, &cfg),
            UplinkOutcome::Acked
        );
    }

    #[test]
    fn eight_attempts_then_hold() {
        let cfg = MacConfig::default();
        let mut m = MacState::default();
        m.reset_retries();
        let a = SimTime::from_millis(100);
        let mut t = SimTime::ZERO;
        let mut failures = 0;
        loop {
            match m.attempt_uplink(t, true, false, a, &cfg) {
                UplinkOutcome::Failed { retry } => {
                    failures += 1;
                    m.end_tx();
                    assert!(m.retransmission_count <= cfg.max_retransmissions);
                    if !retry {
                        break;
                    }
                    t = m.next_tx_allowed;
                }
                other => panic!("unexpected {other:?}"),
            }
        }
        assert_eq!(failures, 8);
        assert!(!m.uplink_pending);
        m.reset_retries();
        assert_eq!(m.retransmission_count, 0);
    }

    #[test]
    fn no_packet_is_noop() {
        let cfg = MacConfig::default();
        let mut m = MacState::default();
        assert_eq!(
            m.attempt_uplink(SimTime::ZERO, false, true, SimTime::from_millis(50), &cfg),
            UplinkOutcome::NoPacket
        );
        assert_eq!(m.tx_count, 0);
    }

    #[test]
    fn class_c_listens_complement_of_tx() {
        let mut m = MacState::default();
        m.start_listening(SimTime::ZERO, None);
        let end = m.begin_tx(SimTime::ZERO, SimTime::from_millis(100), 0.01);
        m.end_tx();
        m.start_listening(end, None);
        m.stop_listening(SimTime::from_secs(180));
        assert_eq!(m.listen_time, SimTime::from_millis(179_900));
    }

    #[test]
    fn queue_window_arithmetic() {
        assert!((queue_window_fraction(1.0, 20, 1.0, 100) - 0.2).abs() < 1e-12);
        let w = receive_window(DeviceClass::QueueBasedClassA, SimTime::ZERO, 180.0, 0.2).unwrap();
        assert_eq!(w.1, Some(SimTime::from_secs(36)));
        assert_eq!(queue_window_fraction(1.0, 0, 1.0, 100), 0.0);
        assert!(receive_window(DeviceClass::QueueBasedClassA, SimTime::ZERO, 180.0, 0.0).is_none());
        assert_eq!(queue_window_fraction(100.0, 1000, 0.01, 1000), 1.0);
    }

    #[test]
    fn queue_window_monotone() {
        let mut prev = 0.0;
        for q in 0..200 {
            let f = queue_window_fraction(2.0, q, 1.0, 100);
            assert!(f >= prev && f <= 1.0);
            prev = f;
        }
        let mut prev = f64::INFINITY;
        for i in 1..100 {
            let f = queue_window_fraction(2.0, 10, i as f64 * 0.02, 100);
            assert!(f <= prev);
            prev = f;
        }
    }

    #[test]
    fn full_coverage_rule() {
        let mut m = MacState::default();
        m.start_listening(SimTime::ZERO, Some(SimTime::from_secs(10)));
        assert!(m.heard_whole(SimTime::from_secs(1), SimTime::from_secs(2)));
        // window closes mid-airtime
        assert!(!m.heard_whole(SimTime::from_millis(9_900), SimTime::from_millis(10_100)));

        let mut busy = MacState::default();
        busy.start_listening(SimTime::ZERO, None);
        busy.begin_tx(SimTime::from_secs(5), SimTime::from_millis(300), 0.01);
        // half-duplex: transmitting during the frame
        assert!(!busy.heard_whole(SimTime::from_millis(5_100), SimTime::from_millis(5_200)));
        busy.end_tx();
        busy.start_listening(SimTime::from_millis(5_300), None);
        assert!(!busy.heard_whole(SimTime::from_millis(5_200), SimTime::from_millis(5_400)));
        assert!(busy.heard_whole(SimTime::from_millis(5_300), SimTime::from_millis(5_400)));
    }
}
