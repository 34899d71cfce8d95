//! Binomial multiplicative cascades.
//!
//! At every level each cell splits into a heavy and a light half. The light
//! half receives `(0.5 - w) / (0.5 + w)` times the heavy half's density, where
//! `w` is the weight spread, so a fully active level is the classic
//! conservative cascade with multipliers `{0.5 - w, 0.5 + w}`. Which half is
//! heavy is a fair coin per cell.
//!
//! Only a fraction of the cells at each level is split at full strength; the
//! rest are left even. Cells are ranked by a random permutation and the cell
//! straddling the boundary gets a partial split, which makes the measure a
//! continuous function of the active fraction for fixed draws.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CascadeParams {
    /// Number of levels; the measure has `2^depth` cells.
    pub depth: u32,
    /// Multiplier asymmetry `w` in `[0, 0.5]`.
    pub weight_spread: f64,
    /// Share of cells split at each level, in `[0, 1]`.
    pub active_fraction: f64,
    /// Hurst exponent of the long-memory modulation applied on top of the cascade.
    pub base_h: f64,
}

impl CascadeParams {
    pub const MIN_DEPTH: u32 = 12;

    pub fn new(depth: u32, weight_spread: f64, base_h: f64) -> Result<Self> {
        let p = CascadeParams {
            depth,
            weight_spread,
            active_fraction: 1.0,
            base_h,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < Self::MIN_DEPTH || self.depth > 30 {
            return Err(Error::param(format!(
                "cascade depth {} outside [{}, 30]",
                self.depth,
                Self::MIN_DEPTH
            )));
        }
        if !(0.0..=0.5).contains(&self.weight_spread) {
            return Err(Error::param(format!(
                "weight spread {} outside [0, 0.5]",
                self.weight_spread
            )));
        }
        if !(0.0..=1.0).contains(&self.active_fraction) {
            return Err(Error::param(format!(
                "active fraction {} outside [0, 1]",
                self.active_fraction
            )));
        }
        if !(self.base_h > 0.0 && self.base_h < 1.0) {
            return Err(Error::param(format!("base H {} outside (0, 1)", self.base_h)));
        }
        Ok(())
    }
}

/// Weight spread whose light/heavy ratio is `2^-z`.
pub fn weight_spread_from_log_ratio(z: f64) -> f64 {
    let ratio = (-z.max(0.0)).exp2();
    0.5 * (1.0 - ratio) / (1.0 + ratio)
}

fn light_ratio(weight_spread: f64) -> f64 {
    (0.5 - weight_spread) / (0.5 + weight_spread)
}

struct Level {
    heavy_left: Vec<bool>,
    rank: Vec<u32>,
}

/// Random orientations and split ranks for every level, kept fixed while the
/// calibrator varies the shape parameters.
pub(crate) struct CascadeDraws {
    levels: Vec<Level>,
}

impl CascadeDraws {
    pub(crate) fn sample<R: Rng + ?Sized>(depth: u32, rng: &mut R) -> Self {
        let levels = (0..depth)
            .map(|lvl| {
                let k = 1usize << lvl;
                let heavy_left = (0..k).map(|_| rng.random::<bool>()).collect();
                let mut rank: Vec<u32> = (0..k as u32).collect();
                rank.shuffle(rng);
                Level { heavy_left, rank }
            })
            .collect();
        CascadeDraws { levels }
    }

    pub(crate) fn render(&self, weight_spread: f64, active_fraction: f64) -> Vec<f64> {
        let m = light_ratio(weight_spread);
        let mut density = vec![1.0];
        for level in &self.levels {
            let k = density.len() as f64;
            let mut next = Vec::with_capacity(2 * density.len());
            for ((&d, &heavy_left), &rank) in density.iter().zip(&level.heavy_left).zip(&level.rank) {
                let strength = (active_fraction * k - rank as f64).clamp(0.0, 1.0);
                let light = d * m.powf(strength);
                if heavy_left {
                    next.extend([d, light]);
                } else {
                    next.extend([light, d]);
                }
            }
            density = next;
        }
        let total: f64 = density.iter().sum();
        density.iter_mut().for_each(|v| *v /= total);
        density
    }
}

/// Random cascade measure with `2^depth` cells and total mass 1.
pub fn generate_cascade(params: &CascadeParams, seed: u64) -> Result<Vec<f64>> {
    params.validate()?;
    let mut rng = crate::rng::stream(seed, &[crate::rng::label("cascade")]);
    let draws = CascadeDraws::sample(params.depth, &mut rng);
    Ok(draws.render(params.weight_spread, params.active_fraction))
}

/// Deterministic cascade: every cell splits, the left half always taking
/// `0.5 + weight_spread` of the mass.
pub fn deterministic_cascade(depth: u32, weight_spread: f64) -> Result<Vec<f64>> {
    CascadeParams::new(depth, weight_spread, 0.5)?;
    let p = 0.5 + weight_spread;
    let mut mass = vec![1.0];
    for _ in 0..depth {
        mass = mass.iter().flat_map(|m| [m * p, m * (1.0 - p)]).collect();
    }
    Ok(mass)
}
