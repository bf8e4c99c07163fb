//! Scenario assembly: gateways, mobility, paired baseline runs and result files.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::config::{GatewayLayout, ScenarioConfig};
use crate::engine::{rng_stream, SimTime};
use crate::error::{Error, Result};
use crate::forwarding::Scheme;
use crate::metrics::{overhead_ratio, MetricsReport};
use crate::mobility::{generate_routes, load_traces, Area, MobilityTrace, Point};
use crate::sim::{simulate, SimOutput, TxRecord};
use crate::DeviceId;

/// Spread `n` gateways over a near-square grid, filled row by row, each at
/// the centre of its cell.
pub fn place_gateways(area: &Area, n: u32) -> Vec<Point> {
    if n == 0 {
        return Vec::new();
    }
    let cols = (n as f64).sqrt().ceil() as u32;
    let rows = n.div_ceil(cols);
    let cw = area.width_m / cols as f64;
    let rh = area.height_m / rows as f64;
    (0..n)
        .map(|i| Point::new((i % cols) as f64 * cw + cw / 2.0, (i / cols) as f64 * rh + rh / 2.0))
        .collect()
}

pub fn gateways(cfg: &ScenarioConfig) -> Vec<Point> {
    match cfg.gateway_layout {
        GatewayLayout::UniformGrid => place_gateways(&cfg.area, cfg.gateway_count),
        GatewayLayout::ExplicitCoordinates => cfg.gateway_positions.clone(),
    }
}

/// Load or synthesize the device traces of a scenario.
pub fn build_traces(cfg: &ScenarioConfig) -> Result<Vec<MobilityTrace>> {
    let traces = match &cfg.mobility.traces {
        Some(path) => load_traces(path)?,
        None => {
            let mut rng = rng_stream("mobility", cfg.seed);
            let mut all = Vec::new();
            for route in &cfg.mobility.routes {
                all.extend(generate_routes(route, &mut rng)?);
            }
            all
        }
    };
    for tr in &traces {
        tr.check_monotone()?;
        tr.check_area(&cfg.area)?;
    }
    Ok(traces)
}

/// Stable identifier of an effective configuration.
pub fn run_id(cfg: &ScenarioConfig) -> String {
    let digest = Sha256::digest(cfg.to_toml().as_bytes());
    format!(
        "{}-{}-s{}-{}",
        cfg.name,
        cfg.scheme,
        cfg.seed,
        &hex::encode(digest)[..12]
    )
}

/// Result of one scenario run plus its paired no-forwarding baseline.
#[derive(Debug)]
pub struct RunResult {
    pub run_id: String,
    pub output: SimOutput,
    pub baseline: Option<SimOutput>,
    pub run_dir: Option<PathBuf>,
}

impl RunResult {
    pub fn report(&self) -> &MetricsReport {
        &self.output.report
    }
}

pub fn simulate_config(cfg: &ScenarioConfig) -> Result<SimOutput> {
    cfg.validate()?;
    let traces = build_traces(cfg)?;
    simulate(cfg, &traces, &gateways(cfg))
}

/// Run a scenario. Forwarding schemes are paired with a baseline run on the
/// same traces and seed so the overhead ratio can be reported. When
/// `out_root` is given, results are written below `out_root/<run id>/`.
pub fn run_scenario(cfg: &ScenarioConfig, out_root: Option<&Path>) -> Result<RunResult> {
    cfg.validate()?;
    let traces = build_traces(cfg)?;
    let gws = gateways(cfg);
    let mut output = simulate(cfg, &traces, &gws)?;
    let baseline = if cfg.scheme.forwards() {
        let base_cfg = ScenarioConfig {
            scheme: Scheme::NoRouting,
            ..cfg.clone()
        };
        let base = simulate(&base_cfg, &traces, &gws)?;
        output.report.overhead_ratio_vs_baseline = overhead_ratio(&output.report, &base.report);
        Some(base)
    } else {
        output.report.overhead_ratio_vs_baseline = Some(1.0);
        None
    };
    if !output.report.conservation_holds() {
        return Err(Error::Invariant("message conservation violated".into()));
    }
    let id = run_id(cfg);
    let run_dir = match out_root.or(cfg.output_dir.as_deref()) {
        Some(root) => {
            let dir = root.join(&id);
            write_results(&dir, cfg, &output.report)?;
            Some(dir)
        }
        None => None,
    };
    Ok(RunResult {
        run_id: id,
        output,
        baseline,
        run_dir,
    })
}

pub fn write_results(dir: &Path, cfg: &ScenarioConfig, report: &MetricsReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.toml"), cfg.to_toml())?;
    report.write_summary(fs::File::create(dir.join("summary.toml"))?)?;
    report.write_throughput(fs::File::create(dir.join("throughput.csv"))?)?;
    Ok(())
}

/// Worst duty-cycle window found by [`duty_cycle_audit`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DutyCycleWindow {
    pub device: DeviceId,
    pub window_start: SimTime,
    pub airtime_s: f64,
    /// Budget: `duty_cycle * window` plus the longest single frame.
    pub allowed_s: f64,
}

/// Slide a window of `window` over every device's transmissions and return
/// the window with the largest airtime relative to its budget.
pub fn duty_cycle_audit(tx_log: &[TxRecord], duty_cycle: f64, window: SimTime) -> Option<DutyCycleWindow> {
    let mut by_device: std::collections::BTreeMap<DeviceId, Vec<(SimTime, SimTime)>> = Default::default();
    for tx in tx_log {
        by_device.entry(tx.sender).or_default().push((tx.start, tx.end));
    }
    let longest = tx_log
        .iter()
        .map(|t| (t.end - t.start).as_secs_f64())
        .fold(0.0, f64::max);
    let allowed_s = duty_cycle * window.as_secs_f64() + longest;
    let mut worst: Option<DutyCycleWindow> = None;
    for (device, mut txs) in by_device {
        txs.sort();
        for &(w0, _) in &txs {
            let w1 = w0 + window;
            let airtime_ms: u64 = txs
                .iter()
                .filter(|(s, e)| *s < w1 && *e > w0)
                .map(|&(s, e)| (e.min(w1) - s.max(w0)).as_millis())
                .sum();
            let airtime_s = airtime_ms as f64 / 1000.0;
            if worst.is_none_or(|w| airtime_s > w.airtime_s) {
                worst = Some(DutyCycleWindow {
                    device,
                    window_start: w0,
                    airtime_s,
                    allowed_s,
                });
            }
        }
    }
    worst
}
