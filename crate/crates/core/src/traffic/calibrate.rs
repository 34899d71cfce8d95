//! Fits the generator's two shape knobs to a target (H, delta-h).
//!
//! The knobs are
//! * `activity` (r): the split fraction of the cascade is `min(1, 2^-r)` and the
//!   log-amplitude of the fGn modulation is `0.5 + max(0, -r)`. Sparse
//!   cascades push h(2) up, strong modulation pulls it toward the fGn's own H.
//! * `log_ratio` (z): the light/heavy density ratio is `2^-z`; mostly drives delta-h.
//!
//! A damped Newton iteration with a finite-difference Jacobian runs on the
//! tolerance-scaled residual. The random draws stay fixed inside an attempt
//! so the residual is a smooth function of the knobs; a failed attempt
//! restarts from fresh draws.

use crate::error::{Error, Result};
use crate::fractal::{estimate_hurst_curve, HurstCurve, ScaleGrid};
use crate::rng;

use super::cascade::{weight_spread_from_log_ratio, CascadeDraws};
use super::fgn::fgn_from_rng;
use super::{GeneratorSettings, MultifractalSpec, TrafficTrace};

pub const MAX_ITERATIONS: usize = 25;
pub const MAX_ATTEMPTS: u64 = 4;
const FD_STEPS: [f64; 2] = [0.15, 0.25];
const MAX_STEP: f64 = 2.0;
/// Newton stops once every residual is inside half the tolerance band.
const STOP_MARGIN: f64 = 0.5;
/// Modulation amplitude used when no cascade is wanted.
const PLAIN_MODULATION: f64 = 0.25;

const GRID_H: [f64; 4] = [0.6, 0.7, 0.8, 0.9];
const GRID_DH: [f64; 4] = [1.5, 2.0, 4.0, 6.0];
const START_ACTIVITY: [[f64; 4]; 4] = [
    [-1.7, -2.0, 0.3, 0.45],
    [-1.1, -1.0, 0.7, 0.8],
    [0.3, 0.9, 1.1, 1.2],
    [2.3, 2.2, 2.1, 1.9],
];
const START_LOG_RATIO: [[f64; 4]; 4] = [
    [1.35, 2.0, 4.6, 6.9],
    [1.6, 2.1, 5.3, 7.5],
    [2.0, 3.2, 6.0, 9.7],
    [3.4, 4.4, 7.4, 11.7],
];

fn segment(grid: &[f64; 4], x: f64) -> (usize, f64) {
    let i = grid.partition_point(|&g| g <= x).saturating_sub(1).min(2);
    (i, (x - grid[i]) / (grid[i + 1] - grid[i]))
}

/// Bilinear interpolation (linear extrapolation outside the grid).
fn interpolate(table: &[[f64; 4]; 4], h: f64, dh: f64) -> f64 {
    let (i, s) = segment(&GRID_H, h);
    let (j, t) = segment(&GRID_DH, dh);
    let lo = table[i][j] * (1.0 - t) + table[i][j + 1] * t;
    let hi = table[i + 1][j] * (1.0 - t) + table[i + 1][j + 1] * t;
    lo * (1.0 - s) + hi * s
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Knobs {
    activity: f64,
    log_ratio: f64,
}

impl Knobs {
    fn warm_start(h: f64, dh: f64) -> Self {
        Knobs {
            activity: interpolate(&START_ACTIVITY, h, dh),
            log_ratio: interpolate(&START_LOG_RATIO, h, dh).max(0.0),
        }
    }

    fn settings(self, base_h: f64) -> GeneratorSettings {
        GeneratorSettings {
            base_h,
            active_fraction: (-self.activity).exp2().min(1.0),
            weight_spread: weight_spread_from_log_ratio(self.log_ratio),
            modulation: 0.5 + (-self.activity).max(0.0),
        }
    }
}

struct Draws {
    cascade: Option<CascadeDraws>,
    noise: Vec<f64>,
}

impl Draws {
    fn sample(spec: &MultifractalSpec, attempt: u64, base_h: f64) -> Result<Self> {
        let mut r = rng::stream(spec.seed, &[rng::label("traffic"), attempt]);
        let mut noise = fgn_from_rng(base_h, spec.length, &mut r)?;
        let mean = noise.iter().sum::<f64>() / noise.len() as f64;
        let sd = (noise.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / noise.len() as f64).sqrt();
        noise.iter_mut().for_each(|v| *v = (*v - mean) / sd);
        let cascade = (spec.target_delta_h > 0.0)
            .then(|| CascadeDraws::sample(spec.length.trailing_zeros(), &mut r));
        Ok(Draws { cascade, noise })
    }

    fn render(&self, settings: &GeneratorSettings) -> Vec<f64> {
        let mut x: Vec<f64> = match &self.cascade {
            Some(c) => c
                .render(settings.weight_spread, settings.active_fraction)
                .iter()
                .zip(&self.noise)
                .map(|(c, g)| c * (settings.modulation * g).exp())
                .collect(),
            None => self.noise.iter().map(|g| (settings.modulation * g).exp()).collect(),
        };
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        x.iter_mut().for_each(|v| *v /= mean);
        x
    }
}

struct Evaluation {
    slots: Vec<f64>,
    curve: HurstCurve,
    settings: GeneratorSettings,
    residual: [f64; 2],
}

impl Evaluation {
    fn merit(&self) -> f64 {
        self.residual[0].abs().max(self.residual[1].abs())
    }
}

struct Problem<'a> {
    spec: &'a MultifractalSpec,
    scales: ScaleGrid,
    tolerance: [f64; 2],
}

impl Problem<'_> {
    fn evaluate(&self, draws: &Draws, settings: GeneratorSettings) -> Result<Evaluation> {
        let slots = draws.render(&settings);
        let curve = estimate_hurst_curve(&slots, &self.spec.q, &self.scales)?;
        let residual = [
            (curve.hurst() - self.spec.target_h) / self.tolerance[0],
            (curve.delta_h - self.spec.target_delta_h) / self.tolerance[1],
        ];
        Ok(Evaluation {
            slots,
            curve,
            settings,
            residual,
        })
    }
}

fn solve2(j: [[f64; 2]; 2], f: [f64; 2]) -> Option<[f64; 2]> {
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    let scale = j.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    if !det.is_finite() || det.abs() <= 1e-12 * scale * scale {
        return None;
    }
    Some([
        (j[1][1] * f[0] - j[0][1] * f[1]) / det,
        (j[0][0] * f[1] - j[1][0] * f[0]) / det,
    ])
}

/// One Newton attempt on fixed draws. Returns the best evaluation seen and
/// the number of iterations used.
fn newton(problem: &Problem, draws: &Draws, start: Knobs) -> Result<(Evaluation, usize)> {
    let base_h = problem.spec.target_h;
    let eval = |k: Knobs| problem.evaluate(draws, k.settings(base_h));
    let mut knobs = start;
    let mut current = eval(knobs)?;
    let mut best_merit = current.merit();
    let mut best_knobs = knobs;

    for iteration in 0..MAX_ITERATIONS {
        if current.merit() <= STOP_MARGIN {
            return Ok((current, iteration));
        }
        let f = current.residual;
        let mut jac = [[0.0; 2]; 2];
        for (col, step) in FD_STEPS.iter().enumerate() {
            let mut probe = knobs;
            if col == 0 {
                probe.activity += step;
            } else {
                probe.log_ratio += step;
            }
            let r = eval(probe)?.residual;
            jac[0][col] = (r[0] - f[0]) / step;
            jac[1][col] = (r[1] - f[1]) / step;
        }
        let dir = solve2(jac, f).map_or([-0.1 * f[0], -0.1 * f[1]], |d| [-d[0], -d[1]]);

        let start_merit = current.merit();
        let mut lambda = 1.0;
        let (mut next_knobs, mut next) = loop {
            let k = Knobs {
                activity: knobs.activity + (lambda * dir[0]).clamp(-MAX_STEP, MAX_STEP),
                log_ratio: (knobs.log_ratio + (lambda * dir[1]).clamp(-MAX_STEP, MAX_STEP))
                    .max(0.0),
            };
            let e = eval(k)?;
            if e.merit() < start_merit || lambda <= 0.05 {
                break (k, e);
            }
            lambda *= 0.5;
        };
        if next.merit() < best_merit {
            best_merit = next.merit();
            best_knobs = next_knobs;
        }
        std::mem::swap(&mut knobs, &mut next_knobs);
        std::mem::swap(&mut current, &mut next);
    }
    let best = if current.merit() <= best_merit {
        current
    } else {
        eval(best_knobs)?
    };
    Ok((best, MAX_ITERATIONS))
}

/// Secant iteration on the fGn Hurst exponent for a cascade-free trace.
fn plain(problem: &Problem, attempt: u64) -> Result<(Evaluation, usize)> {
    let spec = problem.spec;
    let eval = |h: f64| -> Result<Evaluation> {
        let draws = Draws::sample(spec, attempt, h)?;
        let settings = GeneratorSettings {
            base_h: h,
            active_fraction: 0.0,
            weight_spread: 0.0,
            modulation: PLAIN_MODULATION,
        };
        problem.evaluate(&draws, settings)
    };
    let mut h0 = spec.target_h;
    let mut e0 = eval(h0)?;
    let mut best = None::<Evaluation>;
    let mut h1 = (h0 - e0.curve.hurst() + spec.target_h).clamp(0.02, 0.98);
    for iteration in 0..MAX_ITERATIONS {
        if e0.merit() <= STOP_MARGIN {
            return Ok((e0, iteration));
        }
        let e1 = eval(h1)?;
        let slope = (e1.curve.hurst() - e0.curve.hurst()) / (h1 - h0);
        let h2 = if slope.abs() > 1e-3 {
            h1 - (e1.curve.hurst() - spec.target_h) / slope
        } else {
            h1 - (e1.curve.hurst() - spec.target_h)
        };
        h0 = h1;
        h1 = h2.clamp(0.02, 0.98);
        let prev = std::mem::replace(&mut e0, e1);
        if best.as_ref().is_none_or(|b| prev.merit() < b.merit()) {
            best = Some(prev);
        }
    }
    let best = match best {
        Some(b) if b.merit() < e0.merit() => b,
        _ => e0,
    };
    Ok((best, MAX_ITERATIONS))
}

pub(super) fn calibrate(spec: &MultifractalSpec) -> Result<TrafficTrace> {
    let problem = Problem {
        spec,
        scales: ScaleGrid::for_length(spec.length)?,
        tolerance: spec.tolerance(),
    };
    let mut best: Option<Evaluation> = None;
    let mut iterations = 0;
    for attempt in 0..MAX_ATTEMPTS {
        let (eval, used) = if spec.target_delta_h > 0.0 {
            let draws = Draws::sample(spec, attempt, spec.target_h)?;
            newton(
                &problem,
                &draws,
                Knobs::warm_start(spec.target_h, spec.target_delta_h),
            )?
        } else {
            plain(&problem, attempt)?
        };
        iterations += used;
        let accepted = eval.merit() <= 1.0;
        if best.as_ref().is_none_or(|b| eval.merit() < b.merit()) {
            best = Some(eval);
        }
        if accepted {
            break;
        }
    }
    let best = best.expect("at least one attempt runs");
    let accepted = best.merit() <= 1.0;
    let trace = TrafficTrace::measured(best.slots, spec.slot_duration, &spec.q, Some(best.settings))?;
    if accepted {
        Ok(trace)
    } else {
        Err(Error::Calibration {
            iterations,
            best: Box::new(trace),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warm_start_reproduces_grid_nodes() {
        let k = Knobs::warm_start(0.7, 4.0);
        assert!((k.activity - 0.7).abs() < 1e-12);
        assert!((k.log_ratio - 5.3).abs() < 1e-12);
        let between = Knobs::warm_start(0.65, 1.5);
        assert!((between.activity - (-1.4)).abs() < 1e-12);
    }

    #[test]
    fn warm_start_extrapolates() {
        let k = Knobs::warm_start(0.5, 8.0);
        assert!(k.activity.is_finite() && k.log_ratio >= 0.0);
    }

    #[test]
    fn knob_mapping() {
        let s = Knobs {
            activity: -1.0,
            log_ratio: 0.0,
        }
        .settings(0.7);
        assert_eq!(s.active_fraction, 1.0);
        assert_eq!(s.modulation, 1.5);
        assert_eq!(s.weight_spread, 0.0);
        let s = Knobs {
            activity: 2.0,
            log_ratio: 3.0,
        }
        .settings(0.7);
        assert_eq!(s.active_fraction, 0.25);
        assert_eq!(s.modulation, 0.5);
    }

    #[test]
    fn solve_two_by_two() {
        let x = solve2([[2.0, 1.0], [1.0, 3.0]], [3.0, 5.0]).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-12 && (x[1] - 1.4).abs() < 1e-12);
        assert!(solve2([[1.0, 2.0], [2.0, 4.0]], [1.0, 1.0]).is_none());
    }
}
