//! DFT magnitudes and the fixed time/frequency statistics vector.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::stats::{moments, weighted_position_moments};

/// One-sided magnitude spectrum (`d / 2 + 1` bins) with a reusable plan.
pub struct Spectrum {
    fft: Arc<dyn Fft<f64>>,
    len: usize,
}

impl Spectrum {
    pub fn new(len: usize) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(len);
        Self { fft, len }
    }

    pub fn bins(&self) -> usize {
        self.len / 2 + 1
    }

    pub fn magnitudes(&self, x: &[f64]) -> Vec<f64> {
        let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.fft.process(&mut buf);
        buf.truncate(self.bins());
        buf.into_iter().map(|c| c.norm()).collect()
    }
}

pub const TFEX_NAMES: [&str; 16] = [
    "mean",
    "std",
    "skewness",
    "kurtosis",
    "rms",
    "peak_to_peak",
    "crest_factor",
    "shape_factor",
    "impulse_factor",
    "zero_crossings",
    "spectral_centroid",
    "spectral_spread",
    "spectral_skewness",
    "spectral_kurtosis",
    "peak_frequency_bin",
    "spectral_energy",
];

/// Index of the first frequency-domain entry in [`TFEX_NAMES`].
pub const TFEX_FIRST_SPECTRAL: usize = 10;

/// Ten time-domain and six frequency-domain statistics. Spectral moments
/// are taken over bin indices weighted by the one-sided power spectrum;
/// the peak bin ignores DC and is 0 when only DC carries energy.
pub fn tfex(x: &[f64], spectrum: &Spectrum) -> [f64; 16] {
    let n = x.len() as f64;
    let m = moments(x);
    let std = m.variance.sqrt();
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let peak = x.iter().fold(0.0f64, |p, v| p.max(v.abs()));
    let mean_abs = x.iter().map(|v| v.abs()).sum::<f64>() / n;
    let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
    let zero_crossings = x.windows(2).filter(|w| w[0] * w[1] < 0.0).count() as f64;

    let power: Vec<f64> = spectrum.magnitudes(x).into_iter().map(|a| a * a).collect();
    let (centroid, spread, sskew, skurt) = weighted_position_moments(&power);
    let total: f64 = power.iter().sum();
    let floor = 1e-24 * total;
    let peak_bin = power
        .iter()
        .enumerate()
        .skip(1)
        .fold((0usize, floor), |(bi, bv), (k, &p)| if p > bv { (k, p) } else { (bi, bv) })
        .0 as f64;
    let energy = total / n;

    [
        m.mean,
        std,
        m.skewness,
        m.kurtosis,
        rms,
        hi - lo,
        ratio(peak, rms),
        ratio(rms, mean_abs),
        ratio(peak, mean_abs),
        zero_crossings,
        centroid,
        spread,
        sskew,
        skurt,
        peak_bin,
        energy,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn magnitudes_of_pure_tone() {
        let d = 64;
        let x: Vec<f64> = (0..d).map(|t| (2.0 * PI * 5.0 * t as f64 / d as f64).cos()).collect();
        let mag = Spectrum::new(d).magnitudes(&x);
        assert_eq!(mag.len(), 33);
        assert!((mag[5] - 32.0).abs() < 1e-9);
        assert!(mag.iter().enumerate().all(|(k, &m)| k == 5 || m < 1e-9));
    }

    #[test]
    fn constant_signal_statistics() {
        let x = vec![-2.5; 32];
        let f = tfex(&x, &Spectrum::new(32));
        assert!((f[4] - 2.5).abs() < 1e-12); // rms = |c|
        assert_eq!(f[5], 0.0); // peak-to-peak
        assert_eq!(f[9], 0.0); // zero crossings
        assert_eq!(f[14], 0.0); // no non-DC energy
        assert!(f.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn tone_statistics() {
        let d = 128;
        let x: Vec<f64> = (0..d).map(|t| (2.0 * PI * 8.0 * t as f64 / d as f64).sin()).collect();
        let f = tfex(&x, &Spectrum::new(d));
        assert!((f[4] - 0.5f64.sqrt()).abs() < 1e-9);
        assert_eq!(f[14], 8.0);
        assert!((f[10] - 8.0).abs() < 1e-6);
        // one-sided spectrum holds half the tone's energy
        assert!((f[15] - (d as f64 / 2.0) / 2.0).abs() < 1e-6);
        assert!((f[6] - 2f64.sqrt()).abs() < 1e-9); // crest factor of a sampled sine
    }
}
