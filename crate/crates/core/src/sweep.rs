//! Parameter sweeps over scenario fields, run in parallel.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::scenario::run_scenario;

fn default_repetitions() -> u32 {
    1
}

fn default_max_runs() -> usize {
    10_000
}

/// Swept field names paired with their displayed values.
pub type Settings = Vec<(String, String)>;

/// One swept field, addressed by a dotted path such as `channel.d2d_range_m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    pub field: String,
    pub values: Vec<toml::Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Inline base scenario; alternatively `base_file` names a scenario file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<ScenarioConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_file: Option<PathBuf>,
    #[serde(default, rename = "axis")]
    pub axes: Vec<SweepAxis>,
    /// Seeds `base.seed .. base.seed + repetitions`.
    #[serde(default = "default_repetitions")]
    pub repetitions: u32,
    #[serde(default = "default_max_runs")]
    pub max_runs: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TableFormat {
    Table,
    Delimited,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub index: usize,
    pub settings: Vec<(String, String)>,
    pub scheme: String,
    pub seed: u64,
    pub run_id: String,
    pub generated: u64,
    pub delivered: u64,
    pub baseline_delivered: Option<u64>,
    pub mean_delay_s: Option<f64>,
    pub baseline_mean_delay_s: Option<f64>,
    pub mean_hops: Option<f64>,
    pub messages_per_node: f64,
    pub overhead_ratio: Option<f64>,
    pub conservation_ok: bool,
    /// `None` on success, otherwise why the run failed.
    pub failure: Option<String>,
    pub invariant_breach: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

fn set_path(root: &mut toml::Value, path: &str, value: toml::Value) -> std::result::Result<(), String> {
    let mut parts = path.split('.').peekable();
    let mut cur = root;
    while let Some(part) = parts.next() {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| format!("{path}: {part} is not inside a table"))?;
        if parts.peek().is_none() {
            table.insert(part.to_string(), value);
            return Ok(());
        }
        cur = table.get_mut(part).ok_or_else(|| format!("{path}: no field {part}"))?;
    }
    Err(format!("{path}: empty field path"))
}

/// Copy of `base` with `field` replaced by `value`.
pub fn apply_override(base: &ScenarioConfig, field: &str, value: &toml::Value) -> Result<ScenarioConfig> {
    let mut tree = toml::Value::try_from(base).map_err(|e| Error::Parse {
        what: "sweep base".into(),
        message: e.to_string(),
    })?;
    set_path(&mut tree, field, value.clone()).map_err(|m| Error::Validation(vec![m]))?;
    tree.try_into().map_err(|e: toml::de::Error| Error::Parse {
        what: format!("sweep override {field}"),
        message: e.to_string(),
    })
}

impl SweepSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            what: "sweep spec".into(),
            message: e.to_string(),
        })
    }

    /// Load a spec; `base_file` and trace paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut spec = Self::from_toml(&std::fs::read_to_string(path)?)?;
        let dir = path.parent().unwrap_or(Path::new(""));
        match (&spec.base, &spec.base_file) {
            (None, Some(file)) => {
                let file = if file.is_relative() {
                    dir.join(file)
                } else {
                    file.clone()
                };
                spec.base = Some(ScenarioConfig::load(&file)?);
                spec.base_file = Some(file);
            }
            (Some(_), None) => {
                if let Some(tr) = spec.base.as_mut().and_then(|b| b.mobility.traces.as_mut()) {
                    if tr.is_relative() {
                        *tr = dir.join(&*tr);
                    }
                }
            }
            _ => {
                return Err(Error::Validation(vec![
                    "sweep: give exactly one of base or base_file".into()
                ]))
            }
        }
        Ok(spec)
    }

    pub fn base(&self) -> Result<&ScenarioConfig> {
        self.base.as_ref().ok_or_else(|| {
            Error::Validation(vec![
                "sweep: base scenario not loaded (base_file is resolved by load)".into()
            ])
        })
    }

    pub fn run_count(&self) -> usize {
        self.axes.iter().map(|a| a.values.len()).product::<usize>() * self.repetitions as usize
    }

    /// Every configuration of the sweep in a fixed order, with its settings.
    pub fn expand(&self) -> Result<Vec<(Settings, ScenarioConfig)>> {
        if self.repetitions == 0 {
            return Err(Error::Validation(vec!["repetitions: must be at least 1".into()]));
        }
        if let Some(a) = self.axes.iter().find(|a| a.values.is_empty()) {
            return Err(Error::Validation(vec![format!("axis {}: no values", a.field)]));
        }
        let n = self.run_count();
        if n > self.max_runs {
            return Err(Error::Validation(vec![format!(
                "sweep expands to {n} runs, above max_runs = {}",
                self.max_runs
            )]));
        }
        let mut combos: Vec<(Vec<(String, String)>, ScenarioConfig)> = vec![(Vec::new(), self.base()?.clone())];
        for axis in &self.axes {
            let mut next = Vec::with_capacity(combos.len() * axis.values.len());
            for (settings, cfg) in &combos {
                for v in &axis.values {
                    let mut s = settings.clone();
                    if !matches!(axis.field.as_str(), "scheme" | "seed") {
                        s.push((axis.field.clone(), display_value(v)));
                    }
                    next.push((s, apply_override(cfg, &axis.field, v)?));
                }
            }
            combos = next;
        }
        let mut out = Vec::with_capacity(n);
        for (settings, cfg) in combos {
            for rep in 0..self.repetitions {
                let cfg = ScenarioConfig {
                    seed: cfg.seed.wrapping_add(rep as u64),
                    ..cfg.clone()
                };
                cfg.validate()?;
                out.push((settings.clone(), cfg));
            }
        }
        Ok(out)
    }
}

fn display_value(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn run_one(index: usize, settings: Vec<(String, String)>, cfg: &ScenarioConfig, out_root: Option<&Path>) -> SweepRow {
    let mut row = SweepRow {
        index,
        settings,
        scheme: cfg.scheme.to_string(),
        seed: cfg.seed,
        run_id: crate::scenario::run_id(cfg),
        generated: 0,
        delivered: 0,
        baseline_delivered: None,
        mean_delay_s: None,
        baseline_mean_delay_s: None,
        mean_hops: None,
        messages_per_node: 0.0,
        overhead_ratio: None,
        conservation_ok: false,
        failure: None,
        invariant_breach: false,
    };
    match run_scenario(cfg, out_root) {
        Ok(res) => {
            let r = res.report();
            row.generated = r.generated;
            row.delivered = r.total_delivered;
            row.mean_delay_s = r.mean_delay_s;
            row.mean_hops = r.mean_hops;
            row.messages_per_node = r.messages_sent_per_node;
            row.overhead_ratio = r.overhead_ratio_vs_baseline;
            row.conservation_ok =
                r.conservation_holds() && res.baseline.as_ref().is_none_or(|b| b.report.conservation_holds());
            if let Some(b) = &res.baseline {
                row.baseline_delivered = Some(b.report.total_delivered);
                row.baseline_mean_delay_s = b.report.mean_delay_s;
            }
        }
        Err(e) => {
            row.invariant_breach = matches!(e, Error::Invariant(_));
            row.failure = Some(e.to_string());
        }
    }
    row
}

/// Run every configuration of `spec` on `parallelism` worker threads. Rows
/// come back in expansion order regardless of scheduling.
pub fn run_sweep(spec: &SweepSpec, parallelism: usize, out_root: Option<&Path>) -> Result<SweepResult> {
    let jobs = spec.expand()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::Validation(vec![format!("parallel: {e}")]))?;
    let out_root: Option<PathBuf> = out_root.map(Path::to_path_buf);
    let mut rows: Vec<SweepRow> = pool.install(|| {
        jobs.into_par_iter()
            .enumerate()
            .map(|(i, (settings, cfg))| run_one(i, settings, &cfg, out_root.as_deref()))
            .collect()
    });
    rows.sort_by_key(|r| r.index);
    Ok(SweepResult { rows })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".into(), |x| format!("{x:.3}"))
}

impl SweepResult {
    pub fn has_invariant_breach(&self) -> bool {
        self.rows
            .iter()
            .any(|r| r.invariant_breach || (r.failure.is_none() && !r.conservation_ok))
    }

    pub fn has_failure(&self) -> bool {
        self.rows.iter().any(|r| r.failure.is_some())
    }

    fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = vec!["index".into()];
        if let Some(first) = self.rows.first() {
            h.extend(first.settings.iter().map(|(k, _)| k.clone()));
        }
        h.extend(
            [
                "scheme",
                "seed",
                "generated",
                "delivered",
                "baseline_delivered",
                "mean_delay_s",
                "baseline_mean_delay_s",
                "mean_hops",
                "messages_per_node",
                "overhead_ratio",
                "status",
            ]
            .map(String::from),
        );
        h
    }

    fn cells(row: &SweepRow) -> Vec<String> {
        let mut c = vec![row.index.to_string()];
        c.extend(row.settings.iter().map(|(_, v)| v.clone()));
        c.extend([
            row.scheme.clone(),
            row.seed.to_string(),
            row.generated.to_string(),
            row.delivered.to_string(),
            row.baseline_delivered.map_or("-".into(), |d| d.to_string()),
            fmt_opt(row.mean_delay_s),
            fmt_opt(row.baseline_mean_delay_s),
            fmt_opt(row.mean_hops),
            format!("{:.3}", row.messages_per_node),
            fmt_opt(row.overhead_ratio),
            match &row.failure {
                None if row.conservation_ok => "ok".into(),
                None => "conservation-breach".into(),
                Some(f) => format!("failed: {}", f.replace(['\n', ','], " ")),
            },
        ]);
        c
    }

    pub fn render(&self, format: TableFormat) -> String {
        let header = self.header();
        let body: Vec<Vec<String>> = self.rows.iter().map(Self::cells).collect();
        let mut out = String::new();
        match format {
            TableFormat::Delimited => {
                let _ = writeln!(out, "{}", header.join(","));
                for r in &body {
                    let _ = writeln!(out, "{}", r.join(","));
                }
            }
            TableFormat::Table => {
                let widths: Vec<usize> = (0..header.len())
                    .map(|i| {
                        body.iter()
                            .map(|r| r[i].len())
                            .chain([header[i].len()])
                            .max()
                            .unwrap_or(0)
                    })
                    .collect();
                let line = |cells: &[String]| {
                    cells
                        .iter()
                        .zip(&widths)
                        .map(|(c, w)| format!("{c:>w$}"))
                        .collect::<Vec<_>>()
                        .join("  ")
                };
                let _ = writeln!(out, "{}", line(&header));
                for r in &body {
                    let _ = writeln!(out, "{}", line(r));
                }
            }
        }
        out
    }
}
