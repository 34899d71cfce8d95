//! Fractional Gaussian noise by circulant embedding (Davies-Harte).

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

fn autocovariance(h: f64, k: usize) -> f64 {
    let k = k as f64;
    let e = 2.0 * h;
    0.5 * ((k + 1.0).powf(e) - 2.0 * k.powf(e) + (k - 1.0).abs().powf(e))
}

fn validate(h: f64, n: usize) -> Result<()> {
    if !(h > 0.0 && h < 1.0) {
        return Err(Error::param(format!("Hurst exponent {h} outside (0, 1)")));
    }
    if n < 2 || !n.is_power_of_two() {
        return Err(Error::param(format!("fGn length {n} is not a power of two")));
    }
    Ok(())
}

/// Unit-variance fGn of length `n` drawn from `rng`.
pub fn fgn_from_rng<R: Rng + ?Sized>(h: f64, n: usize, rng: &mut R) -> Result<Vec<f64>> {
    validate(h, n)?;
    let m = 2 * n;
    let mut spectrum: Vec<Complex64> = (0..m)
        .map(|j| {
            let lag = if j <= n { j } else { m - j };
            Complex64::new(autocovariance(h, lag), 0.0)
        })
        .collect();
    let fft = FftPlanner::new().plan_fft_forward(m);
    fft.process(&mut spectrum);

    let mut w: Vec<Complex64> = spectrum
        .iter()
        .map(|lambda| {
            // tiny negative eigenvalues are rounding noise for H in (0, 1)
            let scale = (lambda.re.max(0.0) / m as f64).sqrt();
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(re * scale, im * scale)
        })
        .collect();
    fft.process(&mut w);
    Ok(w[..n].iter().map(|c| c.re).collect())
}

/// Zero-mean, unit-variance fractional Gaussian noise with Hurst exponent `h`.
pub fn generate_fgn(h: f64, n: usize, seed: u64) -> Result<Vec<f64>> {
    let mut rng = crate::rng::stream(seed, &[crate::rng::label("fgn")]);
    fgn_from_rng(h, n, &mut rng)
}
