//! Request placement policies.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::cluster::{ServerId, ServerSnapshot};
use crate::error::{Error, Result};
use crate::metrics::{cluster_imbalance, Weights};
use crate::rng;
use crate::traffic::{Request, RequestId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PolicyKind {
    RoundRobin,
    LeastLoaded,
    /// Greedy one-step minimization of the predicted total imbalance.
    MinImbalance,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 3] = [
        PolicyKind::RoundRobin,
        PolicyKind::LeastLoaded,
        PolicyKind::MinImbalance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::RoundRobin => "round_robin",
            PolicyKind::LeastLoaded => "least_loaded",
            PolicyKind::MinImbalance => "min_imbalance",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown policy `{s}` (expected round_robin, least_loaded or min_imbalance)"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Policy {
    pub kind: PolicyKind,
    pub weights: Weights,
    /// Seed for breaking ties uniformly at random; lowest id wins when unset.
    pub tie_seed: Option<u64>,
}

impl Policy {
    pub fn new(kind: PolicyKind, weights: Weights) -> Self {
        Policy {
            kind,
            weights,
            tie_seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DispatchDecision {
    pub request: RequestId,
    pub server: ServerId,
    /// IMB_tot of the cluster after placement (min_imbalance only).
    pub predicted_imb_tot: Option<f64>,
    pub tie_broken: bool,
}

/// IMB_tot of the cluster if `r` were admitted to `target`.
pub fn predicted_total_imbalance(
    snapshots: &[ServerSnapshot],
    r: &Request,
    target: ServerId,
    w: &Weights,
) -> Result<f64> {
    let mut hypothetical = snapshots.to_vec();
    let s = hypothetical
        .iter_mut()
        .find(|s| s.id == target)
        .ok_or_else(|| Error::config(format!("no server with id {target}")))?;
    s.demand += r.demand;
    s.util = crate::cluster::utilization(s.demand, s.capacity);
    cluster_imbalance(&hypothetical, w)
}

fn same_value(a: f64, best: f64) -> bool {
    (a - best).abs() <= 1e-12 * best.abs().max(1.0)
}

/// Dispatcher state: the round-robin cursor and the optional tie-breaking stream.
#[derive(Debug, Clone)]
pub struct Balancer {
    policy: Policy,
    cursor: usize,
    ties: Option<ChaCha8Rng>,
}

impl Balancer {
    pub fn new(policy: Policy) -> Self {
        Balancer {
            policy,
            cursor: 0,
            ties: policy
                .tie_seed
                .map(|seed| rng::stream(seed, &[rng::label("ties")])),
        }
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    /// Picks the server for `r`. Never changes the servers themselves.
    pub fn dispatch(&mut self, snapshots: &[ServerSnapshot], r: &Request) -> Result<DispatchDecision> {
        if snapshots.is_empty() {
            return Err(Error::config("cannot dispatch to an empty cluster"));
        }
        let w = self.policy.weights;
        let (scores, predicted) = match self.policy.kind {
            PolicyKind::RoundRobin => {
                let i = self.cursor % snapshots.len();
                self.cursor = (i + 1) % snapshots.len();
                return Ok(DispatchDecision {
                    request: r.id,
                    server: snapshots[i].id,
                    predicted_imb_tot: None,
                    tie_broken: false,
                });
            }
            PolicyKind::LeastLoaded => (
                snapshots.iter().map(|s| w.combine(s.util)).collect::<Vec<_>>(),
                false,
            ),
            PolicyKind::MinImbalance => (
                snapshots
                    .iter()
                    .map(|s| predicted_total_imbalance(snapshots, r, s.id, &w))
                    .collect::<Result<Vec<_>>>()?,
                true,
            ),
        };
        let best = scores.iter().copied().fold(f64::INFINITY, f64::min);
        let tied: Vec<usize> = (0..scores.len())
            .filter(|&i| same_value(scores[i], best))
            .collect();
        let pick = match &mut self.ties {
            Some(rng) if tied.len() > 1 => tied[rng.random_range(0..tied.len())],
            _ => *tied
                .iter()
                .min_by_key(|&&i| snapshots[i].id)
                .expect("minimum is always attained"),
        };
        Ok(DispatchDecision {
            request: r.id,
            server: snapshots[pick].id,
            predicted_imb_tot: predicted.then_some(scores[pick]),
            tie_broken: tied.len() > 1,
        })
    }
}
