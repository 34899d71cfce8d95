//! Servers, their active requests, and per-class load accounting.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::resources::{Resource, Resources};
use crate::traffic::{ClassId, Request, RequestId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ServerId(pub u32);

impl fmt::Display for ServerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServerSpec {
    pub id: ServerId,
    pub capacity: Resources,
}

impl ServerSpec {
    pub fn new(id: u32, cpu: f64, ram: f64, net: f64) -> Result<Self> {
        let spec = ServerSpec {
            id: ServerId(id),
            capacity: Resources::new(cpu, ram, net),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.capacity.all(|c| c > 0.0 && c.is_finite()) {
            return Err(Error::config(format!(
                "server {}: capacities must be positive",
                self.id
            )));
        }
        Ok(())
    }
}

/// Two clusters of six servers. Server `n` of cluster `c` has id `10c + n`.
pub fn default_cluster() -> Vec<ServerSpec> {
    let mut servers = Vec::with_capacity(12);
    for cluster in 1..=2u32 {
        for n in 1..=6u32 {
            let (cpu, ram, net) = match (cluster, n) {
                (_, 1 | 3 | 5) => (400.0, 450.0, 300.0),
                (_, 2 | 4) => (300.0, 350.0, 250.0),
                (1, 6) => (500.0, 550.0, 350.0),
                _ => (600.0, 650.0, 400.0),
            };
            servers.push(ServerSpec {
                id: ServerId(10 * cluster + n),
                capacity: Resources::new(cpu, ram, net),
            });
        }
    }
    servers
}

pub fn validate_cluster(servers: &[ServerSpec]) -> Result<()> {
    if servers.is_empty() {
        return Err(Error::config("cluster has no servers"));
    }
    for s in servers {
        s.validate()?;
    }
    let mut ids: Vec<ServerId> = servers.iter().map(|s| s.id).collect();
    ids.sort();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::config("duplicate server id"));
    }
    Ok(())
}

/// Demand sums are kept in integer nano-units so that admitting and
/// releasing the same requests in any order restores the exact totals.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Units([i64; 3]);

const UNITS_PER_DEMAND: f64 = 1e9;

impl Units {
    fn from_demand(d: Resources) -> Self {
        Units(d.to_array().map(|v| (v * UNITS_PER_DEMAND).round() as i64))
    }

    fn to_demand(self) -> Resources {
        let [c, r, n] = self.0.map(|u| u as f64 / UNITS_PER_DEMAND);
        Resources::new(c, r, n)
    }

    fn add(&mut self, other: Units) {
        (0..3).for_each(|i| self.0[i] += other.0[i]);
    }

    fn sub(&mut self, other: Units) {
        (0..3).for_each(|i| self.0[i] -= other.0[i]);
    }

    fn is_zero(self) -> bool {
        self.0 == [0; 3]
    }
}

#[derive(Debug, Clone)]
struct Active {
    class: ClassId,
    arrival: f64,
    departure: f64,
    units: Units,
}

/// A request that left a server.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Completion {
    pub id: RequestId,
    pub class: ClassId,
    pub arrival: f64,
    pub departure: f64,
}

impl Completion {
    pub fn sojourn(&self) -> f64 {
        self.departure - self.arrival
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtilSample {
    pub t: f64,
    pub util: Resources,
}

/// Read-only view of a server used by metrics and the balancer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServerSnapshot {
    pub id: ServerId,
    pub capacity: Resources,
    /// Utilization in `[0, 1]` per resource.
    pub util: Resources,
    /// Raw demand currently placed on the server (may exceed capacity).
    pub demand: Resources,
}

impl ServerSnapshot {
    /// Snapshot of a server whose demand is exactly `util * capacity`.
    pub fn from_util(id: ServerId, capacity: Resources, util: Resources) -> Self {
        ServerSnapshot {
            id,
            capacity,
            util,
            demand: util.zip(capacity, |u, c| u * c),
        }
    }

    /// Utilization after adding `extra` demand.
    pub fn util_with(&self, extra: Resources) -> Resources {
        utilization(self.demand + extra, self.capacity)
    }
}

pub fn utilization(demand: Resources, capacity: Resources) -> Resources {
    demand.zip(capacity, |d, c| (d / c).clamp(0.0, 1.0))
}

#[derive(Debug, Clone)]
pub struct ServerState {
    spec: ServerSpec,
    active: BTreeMap<RequestId, Active>,
    load: Units,
    by_class: BTreeMap<ClassId, Units>,
    samples: VecDeque<UtilSample>,
    sample_capacity: usize,
    overhead: f64,
}

impl ServerState {
    pub const DEFAULT_OVERHEAD: f64 = 1.05;

    pub fn new(spec: ServerSpec) -> Self {
        ServerState {
            spec,
            active: BTreeMap::new(),
            load: Units::default(),
            by_class: BTreeMap::new(),
            samples: VecDeque::new(),
            sample_capacity: 3600,
            overhead: Self::DEFAULT_OVERHEAD,
        }
    }

    /// Factor applied to true demand when producing per-class readings.
    pub fn with_overhead(mut self, overhead: f64) -> Self {
        self.overhead = overhead;
        self
    }

    /// Maximum number of retained utilization samples.
    pub fn with_sample_capacity(mut self, n: usize) -> Self {
        self.sample_capacity = n.max(1);
        self
    }

    pub fn spec(&self) -> &ServerSpec {
        &self.spec
    }

    pub fn id(&self) -> ServerId {
        self.spec.id
    }

    pub fn active_count(&self) -> usize {
        self.active.len()
    }

    pub fn is_active(&self, id: RequestId) -> bool {
        self.active.contains_key(&id)
    }

    /// Total demand of active requests.
    pub fn demand(&self) -> Resources {
        self.load.to_demand()
    }

    pub fn util(&self) -> Resources {
        utilization(self.demand(), self.spec.capacity)
    }

    /// Demand in excess of capacity per resource.
    pub fn overload(&self) -> Resources {
        (self.demand() - self.spec.capacity).map(|v| v.max(0.0))
    }

    pub fn snapshot(&self) -> ServerSnapshot {
        ServerSnapshot {
            id: self.spec.id,
            capacity: self.spec.capacity,
            util: self.util(),
            demand: self.demand(),
        }
    }

    /// Per-class usage readings: current demand of each class's active
    /// requests, inflated by the scheduling overhead.
    pub fn measured_by_class(&self) -> BTreeMap<ClassId, Resources> {
        self.by_class
            .iter()
            .map(|(&c, &u)| (c, u.to_demand() * self.overhead))
            .collect()
    }

    pub fn admit(&mut self, r: &Request) -> Result<()> {
        if self.active.contains_key(&r.id) {
            return Err(Error::param(format!(
                "request {} is already active on server {}",
                r.id.0, self.spec.id
            )));
        }
        let units = Units::from_demand(r.demand);
        self.load.add(units);
        self.by_class.entry(r.class).or_default().add(units);
        self.active.insert(
            r.id,
            Active {
                class: r.class,
                arrival: r.arrival,
                departure: r.departure(),
                units,
            },
        );
        Ok(())
    }

    fn remove(&mut self, id: RequestId) -> Option<Completion> {
        let a = self.active.remove(&id)?;
        self.load.sub(a.units);
        if let Some(c) = self.by_class.get_mut(&a.class) {
            c.sub(a.units);
            if c.is_zero() {
                self.by_class.remove(&a.class);
            }
        }
        Some(Completion {
            id,
            class: a.class,
            arrival: a.arrival,
            departure: a.departure,
        })
    }

    /// Removes a specific request regardless of its departure time.
    pub fn release(&mut self, id: RequestId) -> Option<Completion> {
        self.remove(id)
    }

    /// Removes every request with `arrival + duration <= now`.
    pub fn release_expired(&mut self, now: f64) -> Vec<Completion> {
        let due: Vec<RequestId> = self
            .active
            .iter()
            .filter(|(_, a)| a.departure <= now)
            .map(|(&id, _)| id)
            .collect();
        due.into_iter().filter_map(|id| self.remove(id)).collect()
    }

    pub fn record_sample(&mut self, t: f64) {
        self.record_util(t, self.util());
    }

    pub fn record_util(&mut self, t: f64, util: Resources) {
        if self.samples.len() == self.sample_capacity {
            self.samples.pop_front();
        }
        self.samples.push_back(UtilSample { t, util });
    }

    pub fn samples(&self) -> impl Iterator<Item = &UtilSample> {
        self.samples.iter()
    }

    /// Average of the samples recorded in `(latest - window, latest]`.
    pub fn sample_window(&self, window: f64, period: f64) -> Result<WindowedUtilization> {
        let latest = self
            .samples
            .back()
            .ok_or_else(|| Error::InsufficientData(format!("server {} has no samples", self.spec.id)))?
            .t;
        // half a period of slack absorbs rounding in sample timestamps
        let cutoff = latest - window + 0.5 * period;
        let utils: Vec<Resources> = self
            .samples
            .iter()
            .rev()
            .take_while(|s| s.t >= cutoff)
            .map(|s| s.util)
            .collect();
        WindowedUtilization::from_samples(&utils, window, period)
    }
}

/// Utilization averaged over an observation window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowedUtilization {
    pub avg: Resources,
    pub window: f64,
    pub sample_period: f64,
    pub samples: usize,
}

impl WindowedUtilization {
    pub fn from_samples(samples: &[Resources], window: f64, period: f64) -> Result<Self> {
        if !(period > 0.0 && window >= period) {
            return Err(Error::param(format!(
                "window {window} must be >= sample period {period} > 0"
            )));
        }
        if samples.is_empty() {
            return Err(Error::InsufficientData("no samples in window".into()));
        }
        let n = samples.len() as f64;
        let sum = samples.iter().fold(Resources::ZERO, |acc, &s| acc + s);
        Ok(WindowedUtilization {
            avg: sum.map(|v| (v / n).clamp(0.0, 1.0)),
            window,
            sample_period: period,
            samples: samples.len(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassLoad {
    pub class: ClassId,
    /// Fraction of each resource's usage attributed to the class.
    pub share: Resources,
    /// Windowed utilization attributed to the class.
    pub load: Resources,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassLoadBreakdown {
    pub classes: Vec<ClassLoad>,
    /// Resources for which no class had measured usage, so shares are uniform.
    pub uniform: Vec<Resource>,
}

impl ClassLoadBreakdown {
    pub fn get(&self, class: ClassId) -> Option<&ClassLoad> {
        self.classes.iter().find(|c| c.class == class)
    }
}

/// Splits each windowed average among classes in proportion to the measured
/// per-class usage.
pub fn class_breakdown(
    util: &WindowedUtilization,
    measured: &BTreeMap<ClassId, Resources>,
) -> Result<ClassLoadBreakdown> {
    if measured.is_empty() {
        return Err(Error::config("no classes to attribute load to"));
    }
    if measured.values().any(|m| !m.all(|v| v >= 0.0 && v.is_finite())) {
        return Err(Error::param("measured usage must be finite and nonnegative"));
    }
    let totals = measured.values().fold(Resources::ZERO, |acc, &m| acc + m);
    let uniform: Vec<Resource> = Resource::ALL
        .into_iter()
        .filter(|&r| totals[r] <= 0.0)
        .collect();
    let n = measured.len() as f64;
    let share_of = |m: f64, total: f64| if total > 0.0 { m / total } else { 1.0 / n };
    let classes = measured
        .iter()
        .map(|(&class, &m)| {
            let share = m.zip(totals, share_of);
            ClassLoad {
                class,
                share,
                load: share.zip(util.avg, |s, u| s * u),
            }
        })
        .collect();
    Ok(ClassLoadBreakdown { classes, uniform })
}
