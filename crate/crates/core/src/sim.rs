//! Discrete-time cluster simulation and parameter sweeps.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;

use crate::balancer::{Balancer, Policy, PolicyKind};
use crate::cluster::{
    utilization, validate_cluster, Completion, ServerId, ServerSnapshot, ServerSpec, ServerState,
};
use crate::error::{Error, Result};
use crate::metrics::{run_summary, ImbalanceReport, RunSummary, SummaryOptions, Weights};
use crate::resources::Resources;
use crate::rng::{self, derive_seed, label};
use crate::traffic::{
    generate_traffic, materialize_requests, requests::validate_classes, ArrivalModel, ClassId,
    FlowClass, MultifractalSpec, Request, RequestId, TrafficTrace,
};

/// When imbalance reports are produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MonitoringMode {
    /// After every admitted request, from instantaneous utilization.
    PerRequest,
    /// Every `interval` seconds.
    Fixed { interval: f64 },
    /// Interval halves while recent arrivals are bursty and doubles otherwise.
    Adaptive {
        initial: f64,
        min: f64,
        max: f64,
        cv_threshold: f64,
    },
}

impl MonitoringMode {
    pub fn validate(&self) -> Result<()> {
        match *self {
            MonitoringMode::PerRequest => Ok(()),
            MonitoringMode::Fixed { interval } if interval > 0.0 => Ok(()),
            MonitoringMode::Fixed { .. } => Err(Error::config("monitoring interval must be positive")),
            MonitoringMode::Adaptive {
                initial,
                min,
                max,
                cv_threshold,
            } => {
                if !(min > 0.0 && min <= initial && initial <= max) {
                    return Err(Error::config(
                        "adaptive monitoring needs 0 < min <= initial <= max",
                    ));
                }
                if !(cv_threshold >= 0.0) {
                    return Err(Error::config("cv threshold must be >= 0"));
                }
                Ok(())
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MonitoringMode::PerRequest => "per_request",
            MonitoringMode::Fixed { .. } => "fixed_interval",
            MonitoringMode::Adaptive { .. } => "adaptive",
        }
    }
}

/// Seconds of arrival history inspected by the adaptive rule.
pub const ADAPTIVE_LOOKBACK: f64 = 60.0;

/// Coefficient of variation of per-second arrival counts in `[now - span, now)`.
pub fn arrival_cv(arrivals: &[f64], now: f64, span: f64) -> f64 {
    let bins = span.ceil().max(1.0) as usize;
    let start = now - bins as f64;
    let mut counts = vec![0.0f64; bins];
    for &a in arrivals {
        if a >= start && a < now {
            let k = ((a - start) as usize).min(bins - 1);
            counts[k] += 1.0;
        }
    }
    let mean = counts.iter().sum::<f64>() / bins as f64;
    if mean == 0.0 {
        return 0.0;
    }
    let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / bins as f64;
    var.sqrt() / mean
}

/// Next adaptive interval.
pub fn adapt_interval(current: f64, cv: f64, min: f64, max: f64, cv_threshold: f64) -> f64 {
    if cv > cv_threshold {
        (current / 2.0).max(min)
    } else {
        (current * 2.0).min(max)
    }
}

/// Tracks the next monitoring instant.
#[derive(Debug, Clone)]
pub struct MonitorClock {
    mode: MonitoringMode,
    interval: f64,
}

impl MonitorClock {
    pub fn new(mode: MonitoringMode) -> Self {
        let interval = match mode {
            MonitoringMode::PerRequest => 0.0,
            MonitoringMode::Fixed { interval } => interval,
            MonitoringMode::Adaptive { initial, .. } => initial,
        };
        MonitorClock { mode, interval }
    }

    pub fn interval(&self) -> f64 {
        self.interval
    }

    /// Next monitoring time after `now`. `arrivals` holds past arrival
    /// times; `next_arrival` is the next one still to come.
    pub fn next(&mut self, now: f64, arrivals: &[f64], next_arrival: Option<f64>) -> Option<f64> {
        match self.mode {
            MonitoringMode::PerRequest => next_arrival,
            MonitoringMode::Fixed { interval } => Some(now + interval),
            MonitoringMode::Adaptive {
                min,
                max,
                cv_threshold,
                ..
            } => {
                let cv = arrival_cv(arrivals, now, ADAPTIVE_LOOKBACK);
                self.interval = adapt_interval(self.interval, cv, min, max, cv_threshold);
                Some(now + self.interval)
            }
        }
    }
}

/// Requests already running when the simulation starts.
#[derive(Debug, Clone, PartialEq)]
pub struct Backlog {
    /// Initial utilization per server (same value for all resources).
    pub load: Vec<(ServerId, f64)>,
    /// Mean remaining service time of backlog requests.
    pub mean_duration: f64,
    /// Backlog request size as a fraction of server capacity.
    pub granularity: f64,
}

impl Default for Backlog {
    /// 60 % of every resource on the first cluster, draining over minutes.
    fn default() -> Self {
        Backlog {
            load: crate::cluster::default_cluster()
                .iter()
                .filter(|s| s.id.0 < 20)
                .map(|s| (s.id, 0.6))
                .collect(),
            mean_duration: 150.0,
            granularity: 0.02,
        }
    }
}

impl Backlog {
    pub fn validate(&self, servers: &[ServerSpec]) -> Result<()> {
        for (id, u) in &self.load {
            if !servers.iter().any(|s| s.id == *id) {
                return Err(Error::config(format!("backlog names unknown server {id}")));
            }
            if !(*u >= 0.0 && u.is_finite()) {
                return Err(Error::config("backlog load must be >= 0"));
            }
        }
        if !(self.mean_duration > 0.0 && self.granularity > 0.0 && self.granularity <= 1.0) {
            return Err(Error::config(
                "backlog needs a positive mean duration and granularity in (0, 1]",
            ));
        }
        Ok(())
    }
}

/// What the balancer knows about server load when it dispatches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DispatchView {
    /// Exact current demand on every server.
    #[default]
    Live,
    /// Demand measured at the last monitoring report plus the requests the
    /// balancer has dispatched since. Departures stay invisible until the
    /// next report.
    Reported,
}

/// Class id carried by backlog requests.
pub const BACKLOG_CLASS: ClassId = ClassId(0);

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub servers: Vec<ServerSpec>,
    pub classes: Vec<FlowClass>,
    /// Traffic target. Its seed is replaced by one derived from `seed`.
    pub traffic: MultifractalSpec,
    pub arrivals_per_slot: f64,
    pub policy: PolicyKind,
    pub weights: Weights,
    pub tie_seed: Option<u64>,
    pub monitoring: MonitoringMode,
    /// Length of the utilization averaging window behind each report.
    pub observation_window: f64,
    pub run_length: f64,
    pub tick: f64,
    pub seed: u64,
    pub overhead: f64,
    /// Drop requests whose placement would push a resource past capacity.
    pub reject_overload: bool,
    pub backlog: Option<Backlog>,
    pub dispatch_view: DispatchView,
    pub equilibrium_window: f64,
    pub equilibrium_epsilon: f64,
    pub final_window: f64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        validate_cluster(&self.servers)?;
        validate_classes(&self.classes)?;
        if self.classes.iter().any(|c| c.id == BACKLOG_CLASS) {
            return Err(Error::config(format!(
                "class id {BACKLOG_CLASS} is reserved for the initial backlog"
            )));
        }
        self.traffic.validate()?;
        self.monitoring.validate()?;
        if !(self.tick > 0.0 && self.tick.is_finite()) {
            return Err(Error::config("tick must be positive"));
        }
        if !(self.observation_window >= self.tick) {
            return Err(Error::config("observation window must be at least one tick"));
        }
        let monitor_span = match self.monitoring {
            MonitoringMode::Fixed { interval } => interval.max(self.observation_window),
            MonitoringMode::Adaptive { initial, .. } => initial.max(self.observation_window),
            MonitoringMode::PerRequest => self.observation_window,
        };
        if !(self.run_length >= monitor_span) {
            return Err(Error::config(format!(
                "run length {} is shorter than the monitoring window {monitor_span}",
                self.run_length
            )));
        }
        if self.run_length > self.traffic.duration() {
            return Err(Error::config(format!(
                "run length {} exceeds the traffic trace ({} s)",
                self.run_length,
                self.traffic.duration()
            )));
        }
        if !(self.arrivals_per_slot >= 0.0) {
            return Err(Error::config("arrivals per slot must be >= 0"));
        }
        if !(self.overhead >= 1.0 && self.overhead.is_finite()) {
            return Err(Error::config("overhead factor must be >= 1"));
        }
        if !(self.equilibrium_window > 0.0 && self.equilibrium_epsilon > 0.0 && self.final_window > 0.0) {
            return Err(Error::config("equilibrium window, epsilon and final window must be positive"));
        }
        if let Some(b) = &self.backlog {
            b.validate(&self.servers)?;
        }
        Ok(())
    }

    pub fn policy(&self) -> Policy {
        Policy {
            kind: self.policy,
            weights: self.weights,
            tie_seed: self.tie_seed.map(|s| derive_seed(self.seed, &[label("ties"), s])),
        }
    }

    pub fn summary_options(&self) -> SummaryOptions {
        SummaryOptions {
            weights: self.weights,
            equilibrium_window: self.equilibrium_window,
            equilibrium_epsilon: self.equilibrium_epsilon,
            final_window: self.final_window,
        }
    }

    /// The traffic spec actually generated for this scenario.
    pub fn traffic_spec(&self) -> MultifractalSpec {
        MultifractalSpec {
            seed: derive_seed(self.seed, &[label("traffic")]),
            ..self.traffic.clone()
        }
    }

    pub fn with_cell(&self, h: f64, delta_h: f64, seed: u64) -> Scenario {
        let mut s = self.clone();
        s.traffic.target_h = h;
        s.traffic.target_delta_h = delta_h;
        s.seed = seed;
        s
    }

    pub fn arrival_model(&self) -> ArrivalModel {
        ArrivalModel {
            arrivals_per_slot: self.arrivals_per_slot,
            horizon: Some(self.run_length),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunStats {
    pub materialized: usize,
    pub admitted: usize,
    pub dropped: usize,
    pub completed: usize,
    pub backlog: usize,
    /// Time integral of demand beyond capacity, in capacity-seconds summed
    /// over servers and resources.
    pub overload_debt: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub reports: Vec<ImbalanceReport>,
    pub summary: RunSummary,
    pub stats: RunStats,
}

/// Generates the scenario's traffic, materializes requests and simulates.
pub fn run(scenario: &Scenario) -> Result<RunOutput> {
    scenario.validate()?;
    let trace = generate_traffic(&scenario.traffic_spec())?;
    run_trace(scenario, &trace)
}

pub fn run_trace(scenario: &Scenario, trace: &TrafficTrace) -> Result<RunOutput> {
    scenario.validate()?;
    let requests = materialize_requests(
        &trace.slots,
        trace.slot_duration,
        &scenario.classes,
        scenario.arrival_model(),
        derive_seed(scenario.seed, &[label("requests")]),
    )?;
    run_requests(scenario, &requests)
}

fn backlog_requests(scenario: &Scenario, first_id: u64) -> Vec<(ServerId, Request)> {
    let Some(b) = &scenario.backlog else {
        return Vec::new();
    };
    let mut rng = rng::stream(scenario.seed, &[label("backlog")]);
    let exp = Exp::new(1.0 / b.mean_duration).expect("validated positive");
    let mut out = Vec::new();
    let mut id = first_id;
    for &(server, load) in &b.load {
        let spec = scenario.servers.iter().find(|s| s.id == server).expect("validated");
        let count = (load / b.granularity).round() as u64;
        let demand = spec.capacity * (load / count.max(1) as f64);
        for _ in 0..count {
            let r = Request {
                id: RequestId(id),
                class: BACKLOG_CLASS,
                arrival: 0.0,
                duration: exp.sample(&mut rng).max(f64::MIN_POSITIVE) * rng.random_range(0.5..1.5),
                demand,
            };
            id += 1;
            out.push((server, r));
        }
    }
    out
}

struct Engine<'a> {
    scenario: &'a Scenario,
    servers: Vec<ServerState>,
    departures: BinaryHeap<Reverse<(u64, usize, u64)>>,
    completions: Vec<Completion>,
    stats: RunStats,
}

/// Orders departure times exactly (all times are finite and nonnegative).
fn time_key(t: f64) -> u64 {
    t.to_bits()
}

impl Engine<'_> {
    fn snapshots(&self) -> Vec<ServerSnapshot> {
        self.servers.iter().map(ServerState::snapshot).collect()
    }

    fn release_until(&mut self, now: f64) {
        while let Some(&Reverse((key, server, id))) = self.departures.peek() {
            if f64::from_bits(key) > now {
                break;
            }
            self.departures.pop();
            if let Some(c) = self.servers[server].release(RequestId(id)) {
                if c.class != BACKLOG_CLASS {
                    self.completions.push(c);
                }
            }
        }
    }

    fn place(&mut self, server: usize, r: &Request) -> Result<()> {
        self.servers[server].admit(r)?;
        self.departures
            .push(Reverse((time_key(r.departure()), server, r.id.0)));
        Ok(())
    }

    fn windowed_report(&self, t: f64) -> Result<ImbalanceReport> {
        let snaps = self
            .servers
            .iter()
            .map(|s| {
                let w = s.sample_window(self.scenario.observation_window, self.scenario.tick)?;
                Ok(ServerSnapshot::from_util(s.id(), s.spec().capacity, w.avg))
            })
            .collect::<Result<Vec<_>>>()?;
        ImbalanceReport::evaluate(t, &snaps, &self.scenario.weights)
    }
}

struct BalancerView {
    measured: Vec<Resources>,
    dispatched: Vec<Resources>,
}

impl BalancerView {
    fn refresh(&mut self, servers: &[ServerState]) {
        for ((m, d), s) in self.measured.iter_mut().zip(&mut self.dispatched).zip(servers) {
            *m = s.demand();
            *d = Resources::ZERO;
        }
    }

    fn snapshots(&self, specs: &[ServerSpec]) -> Vec<ServerSnapshot> {
        specs
            .iter()
            .zip(self.measured.iter().zip(&self.dispatched))
            .map(|(spec, (&m, &d))| {
                let demand = m + d;
                ServerSnapshot {
                    id: spec.id,
                    capacity: spec.capacity,
                    util: utilization(demand, spec.capacity),
                    demand,
                }
            })
            .collect()
    }
}

/// Simulates a fixed request stream (sorted by arrival).
pub fn run_requests(scenario: &Scenario, requests: &[Request]) -> Result<RunOutput> {
    scenario.validate()?;
    if requests.windows(2).any(|w| w[0].arrival > w[1].arrival) {
        return Err(Error::param("requests must be sorted by arrival time"));
    }
    let requests: Vec<&Request> = requests
        .iter()
        .filter(|r| r.arrival < scenario.run_length)
        .collect();
    let tick = scenario.tick;
    let samples_kept = ((scenario.observation_window / tick).ceil() as usize + 2).max(4);
    let mut engine = Engine {
        scenario,
        servers: scenario
            .servers
            .iter()
            .map(|s| {
                ServerState::new(*s)
                    .with_overhead(scenario.overhead)
                    .with_sample_capacity(samples_kept)
            })
            .collect(),
        departures: BinaryHeap::new(),
        completions: Vec::new(),
        stats: RunStats {
            materialized: requests.len(),
            ..RunStats::default()
        },
    };
    let first_backlog_id = requests.iter().map(|r| r.id.0 + 1).max().unwrap_or(0);
    for (server, r) in backlog_requests(scenario, first_backlog_id) {
        let idx = scenario.servers.iter().position(|s| s.id == server).expect("validated");
        engine.place(idx, &r)?;
        engine.stats.backlog += 1;
    }
    for s in &mut engine.servers {
        s.record_sample(0.0);
    }

    let mut view = BalancerView {
        measured: engine.servers.iter().map(ServerState::demand).collect(),
        dispatched: vec![Resources::ZERO; engine.servers.len()],
    };
    let mut balancer = Balancer::new(scenario.policy());
    let mut clock = MonitorClock::new(scenario.monitoring);
    let per_request = scenario.monitoring == MonitoringMode::PerRequest;
    let mut next_report = if per_request {
        f64::INFINITY
    } else {
        clock.interval()
    };
    let mut reports: Vec<ImbalanceReport> = Vec::new();
    let mut arrival_times: Vec<f64> = Vec::with_capacity(requests.len());
    let mut next = 0usize;
    let ticks = (scenario.run_length / tick).round() as u64;

    for k in 1..=ticks {
        let now = k as f64 * tick;
        while next < requests.len() && requests[next].arrival <= now {
            let r = requests[next];
            next += 1;
            engine.release_until(r.arrival);
            arrival_times.push(r.arrival);
            let snaps = match scenario.dispatch_view {
                DispatchView::Live => engine.snapshots(),
                DispatchView::Reported => view.snapshots(&scenario.servers),
            };
            let decision = balancer.dispatch(&snaps, r)?;
            let idx = snaps
                .iter()
                .position(|s| s.id == decision.server)
                .expect("balancer picks an existing server");
            if scenario.reject_overload {
                let after = snaps[idx].demand + r.demand;
                if !after.zip(snaps[idx].capacity, |d, c| if d <= c { 1.0 } else { 0.0 }).all(|v| v == 1.0) {
                    engine.stats.dropped += 1;
                    continue;
                }
            }
            engine.place(idx, r)?;
            view.dispatched[idx] += r.demand;
            engine.stats.admitted += 1;
            if per_request {
                view.refresh(&engine.servers);
            }
            if per_request && reports.last().is_none_or(|l| r.arrival > l.t) {
                reports.push(ImbalanceReport::evaluate(
                    r.arrival,
                    &engine.snapshots(),
                    &scenario.weights,
                )?);
            }
        }
        engine.release_until(now);
        for s in &mut engine.servers {
            engine.stats.overload_debt += tick
                * s.overload()
                    .zip(s.spec().capacity, |o, c| o / c)
                    .to_array()
                    .iter()
                    .sum::<f64>();
            s.record_sample(now);
        }
        if !per_request && now + 1e-9 * tick >= next_report {
            reports.push(engine.windowed_report(now)?);
            view.refresh(&engine.servers);
            next_report = clock
                .next(now, &arrival_times, requests.get(next).map(|r| r.arrival))
                .unwrap_or(f64::INFINITY);
        }
    }
    if per_request && reports.last().is_none_or(|l| l.t < scenario.run_length) {
        reports.push(ImbalanceReport::evaluate(
            scenario.run_length,
            &engine.snapshots(),
            &scenario.weights,
        )?);
    }

    engine.stats.completed = engine.completions.len();
    let summary = run_summary(&reports, &engine.completions, &scenario.summary_options())?;
    Ok(RunOutput {
        reports,
        summary,
        stats: engine.stats,
    })
}

/// One (H, delta-h) cell of a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub h: f64,
    pub delta_h: f64,
}

/// The sixteen (H, delta-h) combinations of the reference experiment.
pub fn table1_cells() -> Vec<Cell> {
    let mut cells = Vec::with_capacity(16);
    for h in [0.6, 0.7, 0.8, 0.9] {
        for delta_h in [1.5, 2.0, 4.0, 6.0] {
            cells.push(Cell { h, delta_h });
        }
    }
    cells
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateResult {
    pub seed: u64,
    pub equilibrium_time: Option<f64>,
    pub imb_tot_final: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub cell: Cell,
    /// Mean equilibrium time with unsettled runs counted at the run length.
    pub t_eq: f64,
    /// Replicates that never settled.
    pub censored: usize,
    pub imb_tot_final: f64,
    pub replicates: Vec<ReplicateResult>,
}

/// Seed of replicate `replicate` in cell `cell`.
pub fn replicate_seed(base: u64, cell: usize, replicate: usize) -> u64 {
    derive_seed(base, &[label("sweep"), cell as u64, replicate as u64])
}

/// Runs every cell `seeds` times (cells and replicates in parallel).
pub fn sweep(base: &Scenario, cells: &[Cell], seeds: usize) -> Result<Vec<SweepRow>> {
    if cells.is_empty() {
        return Err(Error::config("sweep grid is empty"));
    }
    if seeds == 0 {
        return Err(Error::config("sweep needs at least one seed per cell"));
    }
    base.validate()?;
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..seeds).map(move |r| (c, r)))
        .collect();
    let results: Vec<ReplicateResult> = jobs
        .par_iter()
        .map(|&(c, r)| {
            let seed = replicate_seed(base.seed, c, r);
            let scenario = base.with_cell(cells[c].h, cells[c].delta_h, seed);
            run(&scenario).map(|out| ReplicateResult {
                seed,
                equilibrium_time: out.summary.equilibrium_time,
                imb_tot_final: out.summary.imb_tot_final,
            })
        })
        .collect::<Result<_>>()?;
    Ok(cells
        .iter()
        .zip(results.chunks(seeds))
        .map(|(&cell, reps)| {
            let n = reps.len() as f64;
            SweepRow {
                cell,
                t_eq: reps
                    .iter()
                    .map(|r| r.equilibrium_time.unwrap_or(base.run_length))
                    .sum::<f64>()
                    / n,
                censored: reps.iter().filter(|r| r.equilibrium_time.is_none()).count(),
                imb_tot_final: reps.iter().map(|r| r.imb_tot_final).sum::<f64>() / n,
                replicates: reps.to_vec(),
            }
        })
        .collect())
}

pub fn write_sweep_csv<W: std::io::Write>(out: W, rows: &[SweepRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["H", "delta_h", "t_eq", "t_eq_censored", "imb_tot_final", "seeds"])?;
    for r in rows {
        w.write_record([
            r.cell.h.to_string(),
            r.cell.delta_h.to_string(),
            r.t_eq.to_string(),
            r.censored.to_string(),
            r.imb_tot_final.to_string(),
            r.replicates.len().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Default flow classes: interactive, storage-heavy and streaming traffic.
pub fn default_classes() -> Vec<FlowClass> {
    vec![
        FlowClass {
            id: ClassId(1),
            demand: Resources::new(6.0, 3.0, 2.0),
            mean_duration: 2.0,
            weight: 0.5,
        },
        FlowClass {
            id: ClassId(2),
            demand: Resources::new(3.0, 8.0, 2.0),
            mean_duration: 3.0,
            weight: 0.3,
        },
        FlowClass {
            id: ClassId(3),
            demand: Resources::new(2.0, 3.0, 8.0),
            mean_duration: 4.0,
            weight: 0.2,
        },
    ]
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            servers: crate::cluster::default_cluster(),
            classes: default_classes(),
            traffic: MultifractalSpec::new(0.9, 4.0, 0),
            arrivals_per_slot: 8.0,
            policy: PolicyKind::MinImbalance,
            weights: Weights::default(),
            tie_seed: Some(0),
            monitoring: MonitoringMode::Fixed { interval: 10.0 },
            observation_window: 10.0,
            run_length: 500.0,
            tick: 1.0,
            seed: 0,
            overhead: ServerState::DEFAULT_OVERHEAD,
            reject_overload: false,
            backlog: Some(Backlog::default()),
            dispatch_view: DispatchView::default(),
            equilibrium_window: 60.0,
            equilibrium_epsilon: 0.05,
            final_window: 500.0,
        }
    }
}
