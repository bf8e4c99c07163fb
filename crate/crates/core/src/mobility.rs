//! Time-indexed device positions from trace files or synthetic bus routes.
//!
//! Trace file format: one record per line, `device_id, time_s, x_m, y_m`.
//! Fields may be separated by commas, semicolons, tabs or spaces. Lines
//! starting with `#` are comments and a single header line is allowed before
//! the first record.

use std::collections::HashMap;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::SimTime;

#[derive(Debug, Error)]
pub enum MobilityError {
    #[error("cannot read trace file: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("device {device}: sample times not strictly increasing (line {line})")]
    NonMonotone { device: String, line: usize },
    #[error("device {device}: position ({x}, {y}) outside area {width} x {height} m")]
    OutOfArea {
        device: String,
        x: f64,
        y: f64,
        width: f64,
        height: f64,
    },
    #[error("invalid route {name}: {reason}")]
    InvalidRoute { name: String, reason: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Rectangular simulation area anchored at the origin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Area {
    pub width_m: f64,
    pub height_m: f64,
}

impl Area {
    pub fn contains(&self, p: &Point) -> bool {
        (0.0..=self.width_m).contains(&p.x) && (0.0..=self.height_m).contains(&p.y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    pub time_s: f64,
    pub pos: Point,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MobilityTrace {
    pub device_id: String,
    pub samples: Vec<TraceSample>,
    pub appear_s: f64,
    pub disappear_s: f64,
}

impl MobilityTrace {
    /// Build a trace whose active window spans its first and last samples.
    pub fn from_samples(device_id: impl Into<String>, samples: Vec<TraceSample>) -> Self {
        let appear_s = samples.first().map_or(0.0, |s| s.time_s);
        let disappear_s = samples.last().map_or(0.0, |s| s.time_s);
        MobilityTrace {
            device_id: device_id.into(),
            samples,
            appear_s,
            disappear_s,
        }
    }

    pub fn appear(&self) -> SimTime {
        SimTime::from_secs_f64(self.appear_s)
    }

    pub fn disappear(&self) -> SimTime {
        SimTime::from_secs_f64(self.disappear_s)
    }

    pub fn is_active(&self, t: SimTime) -> bool {
        t >= self.appear() && t <= self.disappear()
    }

    pub fn active_duration_s(&self) -> f64 {
        self.disappear_s - self.appear_s
    }

    /// Position at `t`, linearly interpolated; `None` outside the active window.
    pub fn position_at(&self, t: SimTime) -> Option<Point> {
        if !self.is_active(t) || self.samples.is_empty() {
            return None;
        }
        let ts = t.as_secs_f64();
        let first = &self.samples[0];
        if ts <= first.time_s {
            return Some(first.pos);
        }
        let idx = self.samples.partition_point(|s| s.time_s <= ts);
        if idx >= self.samples.len() {
            return Some(self.samples[self.samples.len() - 1].pos);
        }
        let a = &self.samples[idx - 1];
        let b = &self.samples[idx];
        if a.time_s == ts {
            return Some(a.pos);
        }
        let f = (ts - a.time_s) / (b.time_s - a.time_s);
        Some(Point::new(
            a.pos.x + f * (b.pos.x - a.pos.x),
            a.pos.y + f * (b.pos.y - a.pos.y),
        ))
    }

    pub fn check_monotone(&self) -> Result<(), MobilityError> {
        for (i, w) in self.samples.windows(2).enumerate() {
            if w[1].time_s <= w[0].time_s {
                return Err(MobilityError::NonMonotone {
                    device: self.device_id.clone(),
                    line: i + 2,
                });
            }
        }
        Ok(())
    }

    pub fn check_area(&self, area: &Area) -> Result<(), MobilityError> {
        for s in &self.samples {
            if !area.contains(&s.pos) {
                return Err(MobilityError::OutOfArea {
                    device: self.device_id.clone(),
                    x: s.pos.x,
                    y: s.pos.y,
                    width: area.width_m,
                    height: area.height_m,
                });
            }
        }
        Ok(())
    }

    /// Largest speed implied by consecutive samples, in m/s.
    pub fn max_implied_speed(&self) -> f64 {
        self.samples
            .windows(2)
            .map(|w| w[0].pos.distance(&w[1].pos) / (w[1].time_s - w[0].time_s))
            .fold(0.0, f64::max)
    }
}

fn split_fields(line: &str) -> Vec<&str> {
    line.split([',', ';', '\t', ' '])
        .map(str::trim)
        .filter(|f| !f.is_empty())
        .collect()
}

/// Parse trace text. Traces are returned in order of first appearance.
pub fn parse_traces(text: &str) -> Result<Vec<MobilityTrace>, MobilityError> {
    let mut order: Vec<String> = Vec::new();
    let mut samples: HashMap<String, Vec<(usize, TraceSample)>> = HashMap::new();
    let mut seen_record = false;

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields = split_fields(line);
        let malformed = |reason: String| MobilityError::Malformed { line: line_no, reason };
        if fields.len() != 4 {
            return Err(malformed(format!("expected 4 fields, found {}", fields.len())));
        }
        let nums: Result<Vec<f64>, _> = fields[1..].iter().map(|f| f.parse::<f64>()).collect();
        let nums = match nums {
            Ok(n) => n,
            Err(_) if !seen_record => {
                // header line
                seen_record = true;
                continue;
            }
            Err(e) => return Err(malformed(format!("bad number: {e}"))),
        };
        seen_record = true;
        if nums.iter().any(|v| !v.is_finite()) {
            return Err(malformed("non-finite value".into()));
        }
        if nums[0] < 0.0 {
            return Err(malformed("negative time".into()));
        }
        let id = fields[0].to_string();
        let entry = samples.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            Vec::new()
        });
        if let Some((_, last)) = entry.last() {
            if nums[0] <= last.time_s {
                return Err(MobilityError::NonMonotone {
                    device: id,
                    line: line_no,
                });
            }
        }
        entry.push((
            line_no,
            TraceSample {
                time_s: nums[0],
                pos: Point::new(nums[1], nums[2]),
            },
        ));
    }

    Ok(order
        .into_iter()
        .map(|id| {
            let s = samples.remove(&id).unwrap_or_default();
            MobilityTrace::from_samples(id, s.into_iter().map(|(_, s)| s).collect())
        })
        .collect())
}

pub fn load_traces(path: &Path) -> Result<Vec<MobilityTrace>, MobilityError> {
    let text = fs::read_to_string(path)?;
    let traces = parse_traces(&text)?;
    if traces.is_empty() {
        log::warn!("trace file {} contains no samples", path.display());
    }
    Ok(traces)
}

pub fn write_traces<W: Write>(traces: &[MobilityTrace], mut out: W) -> io::Result<()> {
    writeln!(out, "device_id,time_s,x_m,y_m")?;
    for tr in traces {
        for s in &tr.samples {
            writeln!(out, "{},{},{},{}", tr.device_id, s.time_s, s.pos.x, s.pos.y)?;
        }
    }
    Ok(())
}

fn default_route_name() -> String {
    "route".to_string()
}

fn default_laps() -> u32 {
    1
}

/// A bus-like service: vehicles depart every `headway_s` and run the polyline
/// `laps` times before leaving service. An open polyline is run back and
/// forth; a closed one (first waypoint equal to the last) is circled in the
/// same direction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticRouteSpec {
    #[serde(default = "default_route_name")]
    pub name: String,
    pub waypoints: Vec<Point>,
    pub speed_mps: f64,
    pub headway_s: f64,
    pub service_start_s: f64,
    pub service_end_s: f64,
    pub vehicle_count: u32,
    #[serde(default = "default_laps")]
    pub laps: u32,
    /// Upper bound of the uniform departure jitter.
    #[serde(default)]
    pub jitter_s: f64,
}

impl SyntheticRouteSpec {
    pub fn length_m(&self) -> f64 {
        self.waypoints.windows(2).map(|w| w[0].distance(&w[1])).sum()
    }

    /// Departure slots that fit in the service window.
    pub fn departure_slots(&self) -> u32 {
        ((self.service_end_s - self.service_start_s) / self.headway_s).ceil() as u32
    }

    pub fn validate(&self) -> Result<(), MobilityError> {
        let bad = |reason: &str| MobilityError::InvalidRoute {
            name: self.name.clone(),
            reason: reason.to_string(),
        };
        if self.waypoints.len() < 2 {
            return Err(bad("polyline needs at least 2 waypoints"));
        }
        if !(self.speed_mps > 0.0) {
            return Err(bad("speed must be positive"));
        }
        if !(self.headway_s > 0.0) {
            return Err(bad("headway must be positive"));
        }
        if !(self.service_end_s > self.service_start_s) || self.service_start_s < 0.0 {
            return Err(bad("service window must be non-empty and non-negative"));
        }
        if self.laps == 0 {
            return Err(bad("laps must be at least 1"));
        }
        if self.jitter_s < 0.0 {
            return Err(bad("jitter must be non-negative"));
        }
        if !(self.length_m() > 0.0) {
            return Err(bad("polyline has zero length"));
        }
        Ok(())
    }
}

/// One trace per departure; departures falling at or after the service end
/// are not dispatched.
pub fn generate_routes<R: Rng>(spec: &SyntheticRouteSpec, rng: &mut R) -> Result<Vec<MobilityTrace>, MobilityError> {
    spec.validate()?;
    let mut traces = Vec::new();
    for k in 0..spec.vehicle_count {
        let jitter = if spec.jitter_s > 0.0 {
            rng.random_range(0.0..spec.jitter_s)
        } else {
            0.0
        };
        // millisecond grid keeps the trace window aligned with SimTime
        let depart = ((spec.service_start_s + k as f64 * spec.headway_s + jitter) * 1000.0).round() / 1000.0;
        if depart >= spec.service_end_s {
            break;
        }
        let mut samples = vec![TraceSample {
            time_s: depart,
            pos: spec.waypoints[0],
        }];
        let mut t = depart;
        let mut last = spec.waypoints[0];
        let closed = spec.waypoints.first() == spec.waypoints.last();
        for lap in 0..spec.laps {
            let pts: Box<dyn Iterator<Item = &Point>> = if closed || lap % 2 == 0 {
                Box::new(spec.waypoints.iter().skip(1))
            } else {
                Box::new(spec.waypoints.iter().rev().skip(1))
            };
            for p in pts {
                let d = last.distance(p);
                if d == 0.0 {
                    continue;
                }
                t += d / spec.speed_mps;
                samples.push(TraceSample { time_s: t, pos: *p });
                last = *p;
            }
        }
        traces.push(MobilityTrace::from_samples(format!("{}-{}", spec.name, k), samples));
    }
    Ok(traces)
}

/// Number of traces active at `t`.
pub fn active_count(traces: &[MobilityTrace], t: SimTime) -> usize {
    traces.iter().filter(|tr| tr.is_active(t)).count()
}
