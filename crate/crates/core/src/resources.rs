use std::fmt;
use std::ops::{Add, AddAssign, Index, Mul, Sub};

use serde::{Deserialize, Serialize};

/// The three server resources tracked everywhere in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Resource {
    Cpu,
    Ram,
    Net,
}

impl Resource {
    pub const ALL: [Resource; 3] = [Resource::Cpu, Resource::Ram, Resource::Net];
}

impl fmt::Display for Resource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Resource::Cpu => "cpu",
            Resource::Ram => "ram",
            Resource::Net => "net",
        })
    }
}

/// One value per resource: demands, capacities, utilizations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Resources {
    pub cpu: f64,
    pub ram: f64,
    pub net: f64,
}

impl Resources {
    pub const ZERO: Resources = Resources::splat(0.0);

    pub const fn new(cpu: f64, ram: f64, net: f64) -> Self {
        Resources { cpu, ram, net }
    }

    pub const fn splat(v: f64) -> Self {
        Resources::new(v, v, v)
    }

    pub fn map(self, f: impl Fn(f64) -> f64) -> Self {
        Resources::new(f(self.cpu), f(self.ram), f(self.net))
    }

    pub fn zip(self, other: Self, f: impl Fn(f64, f64) -> f64) -> Self {
        Resources::new(
            f(self.cpu, other.cpu),
            f(self.ram, other.ram),
            f(self.net, other.net),
        )
    }

    pub fn all(self, pred: impl Fn(f64) -> bool) -> bool {
        pred(self.cpu) && pred(self.ram) && pred(self.net)
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.cpu, self.ram, self.net]
    }
}

impl Index<Resource> for Resources {
    type Output = f64;

    fn index(&self, r: Resource) -> &f64 {
        match r {
            Resource::Cpu => &self.cpu,
            Resource::Ram => &self.ram,
            Resource::Net => &self.net,
        }
    }
}

impl Add for Resources {
    type Output = Resources;
    fn add(self, rhs: Self) -> Self {
        self.zip(rhs, |a, b| a + b)
    }
}

impl AddAssign for Resources {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl Sub for Resources {
    type Output = Resources;
    fn sub(self, rhs: Self) -> Self {
        self.zip(rhs, |a, b| a - b)
    }
}

impl Mul<f64> for Resources {
    type Output = Resources;
    fn mul(self, k: f64) -> Self {
        self.map(|a| a * k)
    }
}
