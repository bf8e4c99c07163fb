#![allow(dead_code)]

pub mod stepper;

use std::path::PathBuf;

use lorafwd_core::config::GatewayLayout;
use lorafwd_core::mobility::{Area, MobilityTrace, Point, TraceSample};
use lorafwd_core::sim::simulate;
use lorafwd_core::{ScenarioConfig, Scheme};

use stepper::{Delivery, Rule, Script};

pub fn scenarios_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

pub fn fixture_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/three_device.txt")
}

/// One gateway and three devices over twenty message periods. Device 0
/// parks inside gateway range, device 1 parks out of gateway range but
/// within peer range of device 0, and device 2 drives in from the far
/// corner past device 1 and into gateway range.
pub fn three_device_script() -> Script {
    Script {
        gateway: (1500.0, 1500.0),
        devices: vec![
            vec![(0.0, 1500.0, 2200.0), (3620.0, 1500.0, 2200.0)],
            vec![(7.311, 1500.0, 3000.0), (3620.0, 1500.0, 3000.0)],
            vec![
                (13.577, 200.0, 3400.0),
                (1063.0, 2300.0, 3400.0),
                (2013.0, 2300.0, 1500.0),
                (3620.0, 2300.0, 1500.0),
            ],
        ],
        end_s: 3620,
        period_s: 180,
        message_bytes: 20,
        d2d_m: 1000.0,
        d2g_m: 1000.0,
        q_max: 1000,
    }
}

pub fn rule_of(scheme: Scheme) -> Rule {
    match scheme {
        Scheme::NoRouting => Rule::Baseline,
        Scheme::RcaEtx => Rule::Greedy,
        Scheme::Robc => Rule::Backpressure,
    }
}

pub fn script_config(s: &Script, scheme: Scheme) -> ScenarioConfig {
    let mut cfg = ScenarioConfig {
        name: "three-device".into(),
        area: Area {
            width_m: 4000.0,
            height_m: 4000.0,
        },
        gateway_count: 1,
        gateway_layout: GatewayLayout::ExplicitCoordinates,
        gateway_positions: vec![Point::new(s.gateway.0, s.gateway.1)],
        scheme,
        duration_s: s.end_s,
        message_period_s: s.period_s,
        message_size_bytes: s.message_bytes as u16,
        q_max: s.q_max,
        ..ScenarioConfig::default()
    };
    cfg.channel.shadowing_sigma_db = 0.0;
    cfg.channel.d2d_range_m = s.d2d_m;
    cfg.channel.d2g_range_m = s.d2g_m;
    cfg.mac.retry_jitter_s = 0.0;
    cfg
}

pub fn script_traces(s: &Script) -> Vec<MobilityTrace> {
    s.devices
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let samples = w
                .iter()
                .map(|&(t, x, y)| TraceSample {
                    time_s: t,
                    pos: Point::new(x, y),
                })
                .collect();
            MobilityTrace::from_samples(format!("dev{i}"), samples)
        })
        .collect()
}

/// Deliveries of the event-driven engine on the script, ordered by id.
pub fn simulated_deliveries(s: &Script, scheme: Scheme) -> Vec<Delivery> {
    let cfg = script_config(s, scheme);
    let out = simulate(&cfg, &script_traces(s), &cfg.gateway_positions).expect("script runs");
    let mut v: Vec<Delivery> = out
        .records
        .iter()
        .map(|r| Delivery {
            id: r.message_id.0,
            origin: r.origin.index(),
            created_ms: r.t_d.as_millis(),
            delivered_ms: r.t_g.as_millis(),
            trail: r.relay_path.iter().map(|d| d.index()).collect(),
        })
        .collect();
    v.sort_by_key(|d| d.id);
    v
}

pub fn render(scheme: Scheme, deliveries: &[Delivery]) -> String {
    let mut out = format!("[{scheme}]\n");
    for d in deliveries {
        out.push_str(&d.line());
        out.push('\n');
    }
    out
}

pub const FIXTURE_SCHEMES: [Scheme; 2] = [Scheme::RcaEtx, Scheme::Robc];

/// Fixture text as produced by the step-through model.
pub fn oracle_fixture() -> String {
    let s = three_device_script();
    FIXTURE_SCHEMES
        .iter()
        .map(|&k| {
            render(
                k,
                &stepper::step_through(&s, rule_of(k)).expect("script is unambiguous"),
            )
        })
        .collect()
}

pub fn simulated_fixture() -> String {
    let s = three_device_script();
    FIXTURE_SCHEMES
        .iter()
        .map(|&k| render(k, &simulated_deliveries(&s, k)))
        .collect()
}
