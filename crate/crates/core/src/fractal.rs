//! Generalized Hurst exponent estimation by multifractal detrended
//! fluctuation analysis (MFDFA).
//!
//! The profile of each window is accumulated locally (starting from zero at
//! the window edge) instead of from the start of the series. With a detrending
//! order of at least one the two profiles differ by a straight line inside each
//! window, which the fit removes, but the local form keeps full relative
//! precision in windows whose values are many orders of magnitude below the
//! series mean. Strongly intermittent traces depend on that for negative q.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Windows whose detrended fluctuation is below this fraction of their own
/// profile magnitude are treated as numerically flat and left out of the
/// negative-q averages.
pub const FLAT_WINDOW_THRESHOLD: f64 = 1e-12;

/// Ordered, nonzero moment orders. Always contains q = 2.
#[derive(Debug, Clone, PartialEq)]
pub struct QGrid(Vec<f64>);

impl QGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|q| !q.is_finite()) {
            return Err(Error::param("q grid contains a non-finite value"));
        }
        if values.contains(&0.0) {
            return Err(Error::param("q grid must not contain 0"));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::param("q grid must be strictly increasing"));
        }
        if !values.contains(&2.0) {
            return Err(Error::param("q grid must contain q = 2"));
        }
        Ok(QGrid(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn min(&self) -> f64 {
        self.0[0]
    }

    pub fn max(&self) -> f64 {
        self.0[self.0.len() - 1]
    }
}

impl Default for QGrid {
    /// q in {-5,...,-1, 1,...,5}.
    fn default() -> Self {
        QGrid(vec![-5.0, -4.0, -3.0, -2.0, -1.0, 1.0, 2.0, 3.0, 4.0, 5.0])
    }
}

/// Window sizes (in samples) and the polynomial order removed from each window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScaleGrid {
    scales: Vec<usize>,
    detrend_order: usize,
}

impl ScaleGrid {
    pub const DEFAULT_COUNT: usize = 16;
    pub const DEFAULT_MIN_SCALE: usize = 16;

    pub fn new(scales: Vec<usize>, detrend_order: usize) -> Result<Self> {
        if scales.len() < 2 {
            return Err(Error::param("scale grid needs at least two scales"));
        }
        if scales.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::param("scales must be strictly increasing"));
        }
        if scales[0] < detrend_order + 2 {
            return Err(Error::param(format!(
                "smallest scale {} is below detrend order + 2 = {}",
                scales[0],
                detrend_order + 2
            )));
        }
        Ok(ScaleGrid {
            scales,
            detrend_order,
        })
    }

    /// `count` logarithmically spaced integer scales between `min_scale` and
    /// `len / 4` (duplicates after rounding are merged).
    pub fn log_spaced(
        len: usize,
        count: usize,
        min_scale: usize,
        detrend_order: usize,
    ) -> Result<Self> {
        let max_scale = len / 4;
        if max_scale <= min_scale || count < 2 {
            return Err(Error::InsufficientData(format!(
                "series of length {len} cannot support scales from {min_scale} to {max_scale}"
            )));
        }
        let (lo, hi) = ((min_scale as f64).ln(), (max_scale as f64).ln());
        let mut scales: Vec<usize> = (0..count)
            .map(|i| {
                let frac = i as f64 / (count - 1) as f64;
                (lo + frac * (hi - lo)).exp().round() as usize
            })
            .collect();
        scales.dedup();
        ScaleGrid::new(scales, detrend_order)
    }

    /// Powers of two from `min_scale` up to `len / 4`.
    pub fn dyadic(len: usize, min_scale: usize, detrend_order: usize) -> Result<Self> {
        let max_scale = len / 4;
        let scales: Vec<usize> = std::iter::successors(Some(min_scale.max(1)), |s| Some(s * 2))
            .take_while(|&s| s <= max_scale)
            .collect();
        if scales.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "series of length {len} cannot support dyadic scales from {min_scale}"
            )));
        }
        ScaleGrid::new(scales, detrend_order)
    }

    /// Default grid for a series of the given length: dyadic scales from 16
    /// to `len / 4`, linear detrending. Windows aligned with powers of two
    /// keep cascade-type signals free of the bias that straddling windows add.
    pub fn for_length(len: usize) -> Result<Self> {
        Self::dyadic(len, Self::DEFAULT_MIN_SCALE, 1)
    }

    pub fn scales(&self) -> &[usize] {
        &self.scales
    }

    pub fn detrend_order(&self) -> usize {
        self.detrend_order
    }

    pub fn max_scale(&self) -> usize {
        *self.scales.last().expect("validated non-empty")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub q: f64,
    pub h: f64,
    /// Intercept of the log-log fit, i.e. `ln c(q)`-like prefactor.
    pub intercept: f64,
    /// Coefficient of determination of the log-log fit, in [0, 1].
    pub r2: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitDiagnostics {
    /// Windows excluded from negative-q averages as numerically flat, summed
    /// over scales.
    pub dropped_windows: usize,
    /// h(q) increases somewhere along the grid (unusual for traffic).
    pub increasing: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HurstCurve {
    points: Vec<CurvePoint>,
    pub delta_h: f64,
    pub diagnostics: FitDiagnostics,
}

impl HurstCurve {
    pub fn from_points(mut points: Vec<CurvePoint>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InsufficientData(
                "a Hurst curve needs at least two points".into(),
            ));
        }
        points.sort_by(|a, b| a.q.total_cmp(&b.q));
        let increasing = points.windows(2).any(|w| w[1].h > w[0].h);
        let delta_h = points[0].h - points[points.len() - 1].h;
        Ok(HurstCurve {
            points,
            delta_h,
            diagnostics: FitDiagnostics {
                dropped_windows: 0,
                increasing,
            },
        })
    }

    pub fn points(&self) -> &[CurvePoint] {
        &self.points
    }

    pub fn h_at(&self, q: f64) -> Option<f64> {
        self.points.iter().find(|p| p.q == q).map(|p| p.h)
    }

    /// h(2), the self-similarity estimate.
    pub fn hurst(&self) -> f64 {
        self.h_at(2.0).unwrap_or(f64::NAN)
    }

    /// Writes `q,h_q,intercept,r2` rows followed by a `delta_h` footer row.
    pub fn write_csv<W: std::io::Write>(&self, out: W, footer: &[(&str, String)]) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["q", "h_q", "intercept", "r2"])?;
        for p in &self.points {
            w.write_record([
                p.q.to_string(),
                p.h.to_string(),
                p.intercept.to_string(),
                p.r2.to_string(),
            ])?;
        }
        w.write_record(["delta_h".to_string(), self.delta_h.to_string(), String::new(), String::new()])?;
        for (key, value) in footer {
            w.write_record([key.to_string(), value.clone(), String::new(), String::new()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// h(q_min) - h(q_max).
pub fn delta_h(curve: &HurstCurve) -> Result<f64> {
    let pts = curve.points();
    if pts.len() < 2 {
        return Err(Error::InsufficientData(
            "delta_h needs at least two points".into(),
        ));
    }
    Ok(pts[0].h - pts[pts.len() - 1].h)
}

/// Orthonormal polynomial basis on the sample grid 0..len.
fn polynomial_basis(len: usize, order: usize) -> Vec<Vec<f64>> {
    let mid = (len as f64 - 1.0) / 2.0;
    let half = (len as f64 / 2.0).max(1.0);
    let t: Vec<f64> = (0..len).map(|i| (i as f64 - mid) / half).collect();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(order + 1);
    for k in 0..=order {
        let mut v: Vec<f64> = t.iter().map(|&x| x.powi(k as i32)).collect();
        // two passes of modified Gram-Schmidt
        for _ in 0..2 {
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(a, c)| a * c).sum();
                v.iter_mut().zip(b).for_each(|(a, c)| *a -= dot * c);
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v.iter_mut().for_each(|a| *a /= norm);
        basis.push(v);
    }
    basis
}

/// Squared fluctuation and squared profile magnitude of every window at one scale.
struct ScaleStats {
    f2: Vec<f64>,
    norm2: Vec<f64>,
}

fn scale_stats(series: &[f64], mean: f64, scale: usize, order: usize) -> ScaleStats {
    let n = series.len();
    let windows = n / scale;
    let basis = polynomial_basis(scale, order);
    // order 0 removes only a constant, so the profile must be mean-adjusted
    let offset = if order == 0 { mean } else { 0.0 };
    let starts = (0..windows)
        .map(|k| k * scale)
        .chain((0..windows).map(|k| n - windows * scale + k * scale));

    let mut f2 = Vec::with_capacity(2 * windows);
    let mut norm2 = Vec::with_capacity(2 * windows);
    let mut profile = vec![0.0; scale];
    for start in starts {
        let mut acc = 0.0;
        for (p, &x) in profile.iter_mut().zip(&series[start..start + scale]) {
            acc += x - offset;
            *p = acc;
        }
        let magnitude = profile.iter().map(|y| y * y).sum::<f64>() / scale as f64;
        for b in &basis {
            let dot: f64 = profile.iter().zip(b).map(|(y, c)| y * c).sum();
            profile.iter_mut().zip(b).for_each(|(y, c)| *y -= dot * c);
        }
        let fluct = profile.iter().map(|r| r * r).sum::<f64>() / scale as f64;
        f2.push(fluct);
        norm2.push(magnitude);
    }
    ScaleStats { f2, norm2 }
}

/// ln F_q(s) from per-window squared fluctuations, computed in the log domain.
fn log_fluctuation(q: f64, f2: impl Iterator<Item = f64>) -> Option<f64> {
    let logs: Vec<f64> = f2.map(|v| 0.5 * q * v.ln()).collect();
    if logs.is_empty() {
        return None;
    }
    let peak = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !peak.is_finite() {
        return None;
    }
    let sum: f64 = logs.iter().map(|l| (l - peak).exp()).sum();
    let value = (peak + (sum / logs.len() as f64).ln()) / q;
    value.is_finite().then_some(value)
}

struct LineFit {
    slope: f64,
    intercept: f64,
    r2: f64,
}

fn fit_line(xs: &[f64], ys: &[f64]) -> LineFit {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r2 = if ss_tot > 0.0 {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    } else {
        1.0
    };
    LineFit {
        slope,
        intercept,
        r2,
    }
}

/// Estimates h(q) over `q` by MFDFA at the given scales.
pub fn estimate_hurst_curve(series: &[f64], q: &QGrid, scales: &ScaleGrid) -> Result<HurstCurve> {
    let n = series.len();
    if n < 4 * scales.max_scale() {
        return Err(Error::InsufficientData(format!(
            "series length {n} is shorter than 4 x largest scale ({})",
            scales.max_scale()
        )));
    }
    if series.iter().any(|x| !x.is_finite()) {
        return Err(Error::param("series contains non-finite values"));
    }
    let (lo, hi) = series
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    if lo == hi {
        return Err(Error::DegenerateInput("series is constant".into()));
    }
    let mean = series.iter().sum::<f64>() / n as f64;

    let stats: Vec<ScaleStats> = scales
        .scales()
        .par_iter()
        .map(|&s| scale_stats(series, mean, s, scales.detrend_order()))
        .collect();

    let mut dropped = 0;
    for st in &stats {
        dropped += st
            .f2
            .iter()
            .zip(&st.norm2)
            .filter(|&(&f, &m)| !(f > 0.0 && f > FLAT_WINDOW_THRESHOLD.powi(2) * m))
            .count();
    }

    let mut points = Vec::with_capacity(q.values().len());
    for &qv in q.values() {
        let mut xs = Vec::with_capacity(stats.len());
        let mut ys = Vec::with_capacity(stats.len());
        for (st, &s) in stats.iter().zip(scales.scales()) {
            let value = if qv < 0.0 {
                log_fluctuation(
                    qv,
                    st.f2
                        .iter()
                        .zip(&st.norm2)
                        .filter(|&(&f, &m)| f > 0.0 && f > FLAT_WINDOW_THRESHOLD.powi(2) * m)
                        .map(|(&f, _)| f),
                )
            } else {
                log_fluctuation(qv, st.f2.iter().copied())
            };
            if let Some(v) = value {
                xs.push((s as f64).ln());
                ys.push(v);
            }
        }
        if xs.len() < 2 {
            return Err(Error::DegenerateInput(format!(
                "fewer than two usable scales for q = {qv}"
            )));
        }
        let fit = fit_line(&xs, &ys);
        points.push(CurvePoint {
            q: qv,
            h: fit.slope,
            intercept: fit.intercept,
            r2: fit.r2,
        });
    }

    let mut curve = HurstCurve::from_points(points)?;
    curve.diagnostics.dropped_windows = dropped;
    Ok(curve)
}

/// Convenience: default q grid and default scales for the series length.
pub fn estimate_default(series: &[f64]) -> Result<HurstCurve> {
    let scales = ScaleGrid::for_length(series.len())?;
    estimate_hurst_curve(series, &QGrid::default(), &scales)
}
