//! Declarative run configuration.
//!
//! Every section and key is optional; anything left out takes the value of
//! [`Scenario::default`]. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::cluster::{ServerId, ServerSpec};
use crate::error::{Error, Result};
use crate::fractal::QGrid;
use crate::metrics::Weights;
use crate::resources::Resources;
use crate::sim::{table1_cells, Cell, DispatchView, MonitoringMode, Scenario};
use crate::traffic::{ClassId, FlowClass};

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
struct Triple {
    cpu: f64,
    ram: f64,
    net: f64,
}

impl From<Triple> for Resources {
    fn from(t: Triple) -> Self {
        Resources::new(t.cpu, t.ram, t.net)
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrafficSection {
    h: Option<f64>,
    delta_h: Option<f64>,
    length: Option<usize>,
    slot_duration: Option<f64>,
    q: Option<Vec<f64>>,
    arrivals_per_slot: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassSection {
    id: u32,
    demand: Triple,
    mean_duration: f64,
    weight: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ServerSection {
    id: u32,
    capacity: Triple,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
enum TieBreak {
    LowestId,
    Random,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicySection {
    kind: Option<String>,
    weights: Option<Triple>,
    tie_break: Option<TieBreak>,
    tie_seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct MonitoringSection {
    mode: Option<String>,
    interval: Option<f64>,
    min: Option<f64>,
    max: Option<f64>,
    cv_threshold: Option<f64>,
    observation_window: Option<f64>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ViewKey {
    Live,
    Reported,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunSection {
    run_length: Option<f64>,
    tick: Option<f64>,
    seed: Option<u64>,
    overhead: Option<f64>,
    reject_overload: Option<bool>,
    dispatch_view: Option<ViewKey>,
    equilibrium_window: Option<f64>,
    equilibrium_epsilon: Option<f64>,
    final_window: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct BacklogSection {
    enabled: Option<bool>,
    servers: Option<Vec<u32>>,
    load: Option<f64>,
    mean_duration: Option<f64>,
    granularity: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepSection {
    seeds: Option<usize>,
    table1: Option<bool>,
    h: Option<Vec<f64>>,
    delta_h: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputSection {
    dir: Option<PathBuf>,
    verbosity: Option<u8>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(default)]
    traffic: TrafficSection,
    #[serde(default, rename = "class")]
    classes: Vec<ClassSection>,
    #[serde(default, rename = "server")]
    servers: Vec<ServerSection>,
    #[serde(default)]
    policy: PolicySection,
    #[serde(default)]
    monitoring: MonitoringSection,
    #[serde(default)]
    run: RunSection,
    #[serde(default)]
    backlog: BacklogSection,
    #[serde(default)]
    sweep: SweepSection,
    #[serde(default)]
    output: OutputSection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub cells: Vec<Cell>,
    pub seeds: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            cells: table1_cells(),
            seeds: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub verbosity: u8,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("out"),
            verbosity: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub sweep: SweepConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Parse { line, message, .. } => Error::Parse {
                path: path.to_path_buf(),
                line,
                message,
            },
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let file: FileConfig = toml::from_str(text).map_err(|e| Error::Parse {
            path: PathBuf::new(),
            line: e.span().map(|s| line_of(text, s.start)).unwrap_or(0),
            message: e.message().to_string(),
        })?;
        let config = build(file)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.sweep.cells.is_empty() {
            return Err(Error::config("sweep grid is empty"));
        }
        if self.sweep.seeds == 0 {
            return Err(Error::config("sweep needs at least one seed per cell"));
        }
        for c in &self.sweep.cells {
            let mut t = self.scenario.traffic.clone();
            t.target_h = c.h;
            t.target_delta_h = c.delta_h;
            t.validate()?;
        }
        Ok(())
    }
}

fn line_of(text: &str, offset: usize) -> u64 {
    text[..offset.min(text.len())].matches('\n').count() as u64 + 1
}

fn build(file: FileConfig) -> Result<RunConfig> {
    let mut s = Scenario::default();

    let t = file.traffic;
    if let Some(h) = t.h {
        s.traffic.target_h = h;
    }
    if let Some(d) = t.delta_h {
        s.traffic.target_delta_h = d;
    }
    if let Some(n) = t.length {
        s.traffic.length = n;
    }
    if let Some(dt) = t.slot_duration {
        s.traffic.slot_duration = dt;
    }
    if let Some(q) = t.q {
        s.traffic.q = QGrid::new(q)?;
    }
    if let Some(r) = t.arrivals_per_slot {
        s.arrivals_per_slot = r;
    }

    if !file.classes.is_empty() {
        s.classes = file
            .classes
            .into_iter()
            .map(|c| FlowClass {
                id: ClassId(c.id),
                demand: c.demand.into(),
                mean_duration: c.mean_duration,
                weight: c.weight,
            })
            .collect();
    }
    if !file.servers.is_empty() {
        s.servers = file
            .servers
            .into_iter()
            .map(|v| ServerSpec {
                id: ServerId(v.id),
                capacity: v.capacity.into(),
            })
            .collect();
    }

    let p = file.policy;
    if let Some(kind) = p.kind {
        s.policy = kind.parse()?;
    }
    if let Some(w) = p.weights {
        s.weights = Weights::new(w.cpu, w.ram, w.net)?;
    }
    match p.tie_break {
        Some(TieBreak::LowestId) => s.tie_seed = None,
        Some(TieBreak::Random) | None => {
            if let Some(seed) = p.tie_seed {
                s.tie_seed = Some(seed);
            }
        }
    }
    if p.tie_break == Some(TieBreak::Random) && s.tie_seed.is_none() {
        s.tie_seed = Some(0);
    }

    let m = file.monitoring;
    if let Some(mode) = m.mode.as_deref() {
        s.monitoring = match mode {
            "per_request" => MonitoringMode::PerRequest,
            "fixed_interval" | "fixed" => MonitoringMode::Fixed {
                interval: m.interval.unwrap_or(10.0),
            },
            "adaptive" => {
                let initial = m.interval.unwrap_or(10.0);
                MonitoringMode::Adaptive {
                    initial,
                    min: m.min.unwrap_or(1.0_f64.min(initial)),
                    max: m.max.unwrap_or(60.0_f64.max(initial)),
                    cv_threshold: m.cv_threshold.unwrap_or(1.0),
                }
            }
            other => {
                return Err(Error::config(format!(
                    "unknown monitoring mode {other:?} (per_request, fixed_interval, adaptive)"
                )))
            }
        };
    } else if let Some(interval) = m.interval {
        s.monitoring = MonitoringMode::Fixed { interval };
    }
    if let Some(w) = m.observation_window {
        s.observation_window = w;
    }

    let r = file.run;
    if let Some(v) = r.run_length {
        s.run_length = v;
    }
    if let Some(v) = r.tick {
        s.tick = v;
    }
    if let Some(v) = r.seed {
        s.seed = v;
    }
    if let Some(v) = r.overhead {
        s.overhead = v;
    }
    if let Some(v) = r.reject_overload {
        s.reject_overload = v;
    }
    if let Some(v) = r.dispatch_view {
        s.dispatch_view = match v {
            ViewKey::Live => DispatchView::Live,
            ViewKey::Reported => DispatchView::Reported,
        };
    }
    if let Some(v) = r.equilibrium_window {
        s.equilibrium_window = v;
    }
    if let Some(v) = r.equilibrium_epsilon {
        s.equilibrium_epsilon = v;
    }
    match r.final_window {
        Some(v) => s.final_window = v,
        None => s.final_window = s.run_length,
    }

    let b = file.backlog;
    if b.enabled == Some(false) {
        s.backlog = None;
    } else {
        let mut backlog = s.backlog.take().unwrap_or_default();
        let load = b.load.or_else(|| backlog.load.first().map(|x| x.1)).unwrap_or(0.0);
        let ids: Vec<ServerId> = match b.servers {
            Some(ids) => ids.into_iter().map(ServerId).collect(),
            None => {
                let defaults: Vec<ServerId> = backlog.load.iter().map(|x| x.0).collect();
                if defaults.iter().all(|id| s.servers.iter().any(|v| v.id == *id)) {
                    defaults
                } else {
                    Vec::new()
                }
            }
        };
        backlog.load = ids.into_iter().map(|id| (id, load)).collect();
        if let Some(v) = b.mean_duration {
            backlog.mean_duration = v;
        }
        if let Some(v) = b.granularity {
            backlog.granularity = v;
        }
        s.backlog = (!backlog.load.is_empty()).then_some(backlog);
    }

    let mut sweep = SweepConfig::default();
    let sw = file.sweep;
    if let Some(n) = sw.seeds {
        sweep.seeds = n;
    }
    if sw.table1 != Some(true) && (sw.h.is_some() || sw.delta_h.is_some()) {
        let hs = sw.h.unwrap_or_else(|| vec![s.traffic.target_h]);
        let ds = sw.delta_h.unwrap_or_else(|| vec![s.traffic.target_delta_h]);
        sweep.cells = hs
            .iter()
            .flat_map(|&h| ds.iter().map(move |&delta_h| Cell { h, delta_h }))
            .collect();
    }

    let mut output = OutputConfig::default();
    if let Some(d) = file.output.dir {
        output.dir = d;
    }
    if let Some(v) = file.output.verbosity {
        output.verbosity = v;
    }

    Ok(RunConfig {
        scenario: s,
        sweep,
        output,
    })
}
