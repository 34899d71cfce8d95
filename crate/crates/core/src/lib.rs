//! Multifractal traffic synthesis, MFDFA estimation and load-imbalance
//! simulation for heterogeneous server clusters.

pub mod balancer;
pub mod cli;
pub mod cluster;
pub mod config;
pub mod error;
pub mod fractal;
pub mod metrics;
pub mod resources;
pub mod rng;
pub mod sim;
pub mod traffic;

pub use error::{Error, Result};
pub use resources::{Resource, Resources};
