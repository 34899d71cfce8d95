//! System averages, imbalance measures, equilibrium detection and run summaries.

use std::io::Write;

use crate::cluster::{Completion, ServerId, ServerSnapshot};
use crate::error::{Error, Result};
use crate::resources::Resources;

/// Relative importance of CPU, memory and bandwidth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Weights {
    cpu: f64,
    ram: f64,
    net: f64,
}

impl Weights {
    /// Accepted deviation of the weight sum from 1.
    pub const SUM_TOLERANCE: f64 = 1e-9;

    /// Validates and renormalizes so the weights sum to 1 to rounding.
    pub fn new(cpu: f64, ram: f64, net: f64) -> Result<Self> {
        if [cpu, ram, net].iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::param("weights must be finite and nonnegative"));
        }
        let sum = cpu + ram + net;
        if (sum - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::param(format!("weights sum to {sum}, expected 1")));
        }
        Ok(Weights {
            cpu: cpu / sum,
            ram: ram / sum,
            net: net / sum,
        })
    }

    pub fn cpu(&self) -> f64 {
        self.cpu
    }

    pub fn ram(&self) -> f64 {
        self.ram
    }

    pub fn net(&self) -> f64 {
        self.net
    }

    pub fn combine(&self, v: Resources) -> f64 {
        self.cpu * v.cpu + self.ram * v.ram + self.net * v.net
    }
}

impl Default for Weights {
    fn default() -> Self {
        Weights {
            cpu: 1.0 / 3.0,
            ram: 1.0 / 3.0,
            net: 1.0 / 3.0,
        }
    }
}

/// Capacity-weighted mean utilization per resource.
pub fn system_averages(servers: &[ServerSnapshot]) -> Result<Resources> {
    if servers.is_empty() {
        return Err(Error::config("cluster has no servers"));
    }
    // Deviations from the first server keep identical loads exact.
    let reference = servers[0].util;
    let (weighted, capacity) = servers.iter().fold(
        (Resources::ZERO, Resources::ZERO),
        |(w, c), s| {
            let dev = s.util - reference;
            (w + dev.zip(s.capacity, |d, k| d * k), c + s.capacity)
        },
    );
    Ok(reference + weighted.zip(capacity, |w, c| w / c))
}

/// Sum over servers of squared deviation from the system average, per resource.
pub fn resource_imbalance(servers: &[ServerSnapshot], averages: Resources) -> Resources {
    servers.iter().fold(Resources::ZERO, |acc, s| {
        acc + s.util.zip(averages, |u, a| (u - a) * (u - a))
    })
}

/// Weighted squared deviation of one server from the system averages.
pub fn server_imbalance(util: Resources, averages: Resources, w: &Weights) -> f64 {
    w.combine(util.zip(averages, |u, a| (u - a) * (u - a)))
}

/// Mean of the per-server imbalances.
pub fn total_imbalance(per_server: &[f64]) -> Result<f64> {
    if per_server.is_empty() {
        return Err(Error::config("no servers to average over"));
    }
    Ok(per_server.iter().sum::<f64>() / per_server.len() as f64)
}

/// IMB_tot of a cluster snapshot.
pub fn cluster_imbalance(servers: &[ServerSnapshot], w: &Weights) -> Result<f64> {
    let averages = system_averages(servers)?;
    let per: Vec<f64> = servers
        .iter()
        .map(|s| server_imbalance(s.util, averages, w))
        .collect();
    total_imbalance(&per)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerReport {
    pub id: ServerId,
    pub util: Resources,
    pub imbalance: f64,
}

/// All imbalance measures at one monitoring instant.
#[derive(Debug, Clone, PartialEq)]
pub struct ImbalanceReport {
    pub t: f64,
    pub averages: Resources,
    /// IMB_CPU, IMB_RAM, IMB_Net.
    pub per_resource: Resources,
    pub servers: Vec<ServerReport>,
    pub imb_tot: f64,
}

impl ImbalanceReport {
    pub fn evaluate(t: f64, servers: &[ServerSnapshot], w: &Weights) -> Result<Self> {
        let averages = system_averages(servers)?;
        let per_resource = resource_imbalance(servers, averages);
        let servers: Vec<ServerReport> = servers
            .iter()
            .map(|s| ServerReport {
                id: s.id,
                util: s.util,
                imbalance: server_imbalance(s.util, averages, w),
            })
            .collect();
        let per: Vec<f64> = servers.iter().map(|s| s.imbalance).collect();
        Ok(ImbalanceReport {
            t,
            averages,
            per_resource,
            imb_tot: total_imbalance(&per)?,
            servers,
        })
    }
}

pub fn write_reports_csv<W: Write>(out: W, reports: &[ImbalanceReport]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["t", "imb_cpu", "imb_ram", "imb_net", "imb_tot"]
        .map(String::from)
        .to_vec();
    if let Some(first) = reports.first() {
        header.extend(first.servers.iter().map(|s| format!("imb_s{}", s.id)));
    }
    w.write_record(&header)?;
    for r in reports {
        let mut row = vec![
            r.t.to_string(),
            r.per_resource.cpu.to_string(),
            r.per_resource.ram.to_string(),
            r.per_resource.net.to_string(),
            r.imb_tot.to_string(),
        ];
        row.extend(r.servers.iter().map(|s| s.imbalance.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Earliest sample time after which every `window`-long stretch of the
/// series varies by less than `epsilon`. A full window must be observed
/// after that time, otherwise the series is reported as not settled.
pub fn detect_equilibrium(series: &[(f64, f64)], window: f64, epsilon: f64) -> Result<Option<f64>> {
    if series.is_empty() {
        return Err(Error::InsufficientData("empty imbalance series".into()));
    }
    if !(window > 0.0 && epsilon > 0.0) {
        return Err(Error::param("window and epsilon must be positive"));
    }
    let t_last = series[series.len() - 1].0;
    let mut settled_from = 0;
    let mut end = 0;
    for (i, &(t, _)) in series.iter().enumerate() {
        end = end.max(i);
        while end + 1 < series.len() && series[end + 1].0 <= t + window {
            end += 1;
        }
        let (lo, hi) = series[i..=end]
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, v)| (lo.min(v), hi.max(v)));
        if hi - lo >= epsilon {
            settled_from = i + 1;
        }
    }
    Ok(series
        .get(settled_from)
        .map(|&(t, _)| t)
        .filter(|&t0| t0 + window <= t_last))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryOptions {
    pub weights: Weights,
    pub equilibrium_window: f64,
    pub equilibrium_epsilon: f64,
    /// Length of the trailing stretch averaged into `imb_tot_final`.
    pub final_window: f64,
}

impl Default for SummaryOptions {
    fn default() -> Self {
        SummaryOptions {
            weights: Weights::default(),
            equilibrium_window: 60.0,
            equilibrium_epsilon: 0.05,
            final_window: 60.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub equilibrium_time: Option<f64>,
    /// Mean IMB_tot over the trailing `final_window` seconds.
    pub imb_tot_final: f64,
    /// Mean sojourn of completed requests.
    pub avg_duration: Option<f64>,
    pub completed: usize,
    /// Highest weighted load seen on each server.
    pub processing_period_per_server: Vec<(ServerId, f64)>,
    /// Mean over servers of their highest weighted load.
    pub processing_period_system: f64,
    /// Weighted load averaged over time and servers.
    pub efficiency: f64,
}

pub fn run_summary(
    reports: &[ImbalanceReport],
    completed: &[Completion],
    opts: &SummaryOptions,
) -> Result<RunSummary> {
    let last = reports
        .last()
        .ok_or_else(|| Error::InsufficientData("no imbalance reports".into()))?;
    let series: Vec<(f64, f64)> = reports.iter().map(|r| (r.t, r.imb_tot)).collect();
    let equilibrium_time =
        detect_equilibrium(&series, opts.equilibrium_window, opts.equilibrium_epsilon)?;

    let tail: Vec<f64> = reports
        .iter()
        .filter(|r| r.t >= last.t - opts.final_window)
        .map(|r| r.imb_tot)
        .collect();
    let imb_tot_final = tail.iter().sum::<f64>() / tail.len() as f64;

    let w = &opts.weights;
    let mut peaks: Vec<(ServerId, f64)> = last.servers.iter().map(|s| (s.id, 0.0)).collect();
    let mut load_sum = 0.0;
    let mut load_count = 0usize;
    for r in reports {
        for (s, peak) in r.servers.iter().zip(peaks.iter_mut()) {
            let load = w.combine(s.util);
            peak.1 = peak.1.max(load);
            load_sum += load;
            load_count += 1;
        }
    }
    let processing_period_system = peaks.iter().map(|p| p.1).sum::<f64>() / peaks.len() as f64;
    let avg_duration = (!completed.is_empty())
        .then(|| completed.iter().map(Completion::sojourn).sum::<f64>() / completed.len() as f64);

    Ok(RunSummary {
        equilibrium_time,
        imb_tot_final,
        avg_duration,
        completed: completed.len(),
        processing_period_per_server: peaks,
        processing_period_system,
        efficiency: load_sum / load_count as f64,
    })
}

impl RunSummary {
    /// `key = value` lines. A run that never settles reports
    /// `equilibrium_time = >{run_length}`.
    pub fn to_text(&self, run_length: f64) -> String {
        let mut s = String::new();
        let eq = match self.equilibrium_time {
            Some(t) => t.to_string(),
            None => format!(">{run_length}"),
        };
        s += &format!("equilibrium_time = {eq}\n");
        s += &format!("imb_tot_final = {}\n", self.imb_tot_final);
        match self.avg_duration {
            Some(d) => s += &format!("avg_duration = {d}\n"),
            None => s += "avg_duration = none\n",
        }
        s += &format!("completed = {}\n", self.completed);
        s += &format!("efficiency = {}\n", self.efficiency);
        s += &format!("processing_period_system = {}\n", self.processing_period_system);
        for (id, p) in &self.processing_period_per_server {
            s += &format!("processing_period_s{id} = {p}\n");
        }
        s
    }
}
