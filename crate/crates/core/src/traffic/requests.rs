//! Turning an intensity trace into individual requests.

use std::fmt;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::{Exp, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::resources::Resources;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassId(pub u32);

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RequestId(pub u64);

/// A class of service.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowClass {
    pub id: ClassId,
    pub demand: Resources,
    /// Mean service time in seconds.
    pub mean_duration: f64,
    /// Share of arrivals.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Request {
    pub id: RequestId,
    pub class: ClassId,
    pub arrival: f64,
    pub duration: f64,
    pub demand: Resources,
}

impl Request {
    pub fn departure(&self) -> f64 {
        self.arrival + self.duration
    }
}

pub fn validate_classes(classes: &[FlowClass]) -> Result<()> {
    if classes.is_empty() {
        return Err(Error::config("at least one flow class is required"));
    }
    for c in classes {
        if !c.demand.all(|d| d > 0.0 && d.is_finite()) {
            return Err(Error::config(format!("class {}: demands must be positive", c.id)));
        }
        if !(c.mean_duration > 0.0 && c.mean_duration.is_finite()) {
            return Err(Error::config(format!("class {}: mean duration must be positive", c.id)));
        }
        if !(c.weight >= 0.0) {
            return Err(Error::config(format!("class {}: weight must be >= 0", c.id)));
        }
    }
    let mut ids: Vec<ClassId> = classes.iter().map(|c| c.id).collect();
    ids.sort();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::config("duplicate class id"));
    }
    let total: f64 = classes.iter().map(|c| c.weight).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!("class weights sum to {total}, expected 1")));
    }
    Ok(())
}

/// How trace intensity becomes arrivals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrivalModel {
    /// Mean arrivals per slot over the whole trace.
    pub arrivals_per_slot: f64,
    /// Arrivals at or after this time (seconds) are not materialized.
    pub horizon: Option<f64>,
}

impl Default for ArrivalModel {
    fn default() -> Self {
        ArrivalModel {
            arrivals_per_slot: 8.0,
            horizon: None,
        }
    }
}

/// Poisson arrivals per slot with mean proportional to intensity, classes
/// drawn by weight, uniform arrival times inside the slot and exponential
/// durations. The result is sorted by arrival time and numbered from 0.
pub fn materialize_requests(
    slots: &[f64],
    slot_duration: f64,
    classes: &[FlowClass],
    model: ArrivalModel,
    seed: u64,
) -> Result<Vec<Request>> {
    validate_classes(classes)?;
    if slots.is_empty() {
        return Err(Error::InsufficientData("trace has no slots".into()));
    }
    if !(model.arrivals_per_slot >= 0.0) {
        return Err(Error::config("arrivals per slot must be >= 0"));
    }
    let mean = slots.iter().sum::<f64>() / slots.len() as f64;
    if mean <= 0.0 || model.arrivals_per_slot == 0.0 {
        return Ok(Vec::new());
    }
    let rate_scale = model.arrivals_per_slot / mean;
    let horizon = model.horizon.unwrap_or(f64::INFINITY);

    let pick = WeightedIndex::new(classes.iter().map(|c| c.weight))
        .map_err(|e| Error::config(format!("class weights: {e}")))?;
    let durations: Vec<Exp<f64>> = classes
        .iter()
        .map(|c| Exp::new(1.0 / c.mean_duration).expect("validated positive"))
        .collect();
    let mut rng = rng::stream(seed, &[rng::label("arrivals")]);

    let mut out = Vec::new();
    for (slot, &intensity) in slots.iter().enumerate() {
        let start = slot as f64 * slot_duration;
        if start >= horizon {
            break;
        }
        let lambda = intensity * rate_scale;
        if lambda <= 0.0 {
            continue;
        }
        let count = Poisson::new(lambda)
            .map_err(|e| Error::param(format!("slot {slot}: {e}")))?
            .sample(&mut rng) as u64;
        for _ in 0..count {
            let k = pick.sample(&mut rng);
            let arrival = start + rng.random::<f64>() * slot_duration;
            let duration = durations[k].sample(&mut rng).max(f64::MIN_POSITIVE);
            if arrival < horizon {
                out.push(Request {
                    id: RequestId(0),
                    class: classes[k].id,
                    arrival,
                    duration,
                    demand: classes[k].demand,
                });
            }
        }
    }
    out.sort_by(|a, b| a.arrival.total_cmp(&b.arrival));
    for (i, r) in out.iter_mut().enumerate() {
        r.id = RequestId(i as u64);
    }
    Ok(out)
}

pub fn write_requests_csv(path: &Path, requests: &[Request]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let io = |e: csv::Error| Error::io(path, e.into());
    w.write_record(["id", "class", "arrival", "duration", "cpu", "ram", "net"])
        .map_err(io)?;
    for r in requests {
        w.write_record([
            r.id.0.to_string(),
            r.class.to_string(),
            r.arrival.to_string(),
            r.duration.to_string(),
            r.demand.cpu.to_string(),
            r.demand.ram.to_string(),
            r.demand.net.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Deserialize)]
struct RequestRow {
    id: u64,
    class: u32,
    arrival: f64,
    duration: f64,
    cpu: f64,
    ram: f64,
    net: f64,
}

pub fn read_requests_csv(path: &Path) -> Result<Vec<Request>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(std::io::BufReader::new(file));
    let mut out = Vec::new();
    for row in reader.deserialize::<RequestRow>() {
        let row = row.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        out.push(Request {
            id: RequestId(row.id),
            class: ClassId(row.class),
            arrival: row.arrival,
            duration: row.duration,
            demand: Resources::new(row.cpu, row.ram, row.net),
        });
    }
    Ok(out)
}
