//! Occlusion attribution for black-box signal classifiers.
//!
//! A mask of `mask_size` samples slides over the signal from sample 0 in
//! steps of `stride`; the last window is clipped to the signal end. Each
//! window's drop is the base class score of the intact signal minus the
//! base class score of the masked one, and a sample's attribution is the
//! mean drop over the windows covering it. The base class is the argmax of
//! the intact signal's scores.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_GRID_MASK: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcclusionConfig {
    pub mask_size: usize,
    pub stride: usize,
    pub mask_value: f64,
}

impl OcclusionConfig {
    pub fn new(mask_size: usize, stride: usize) -> Self {
        Self { mask_size, stride, mask_value: 0.0 }
    }

    pub fn validate(&self, signal_len: usize) -> Result<()> {
        if self.mask_size == 0 || self.stride == 0 {
            return Err(Error::Config("mask_size and stride must be positive".into()));
        }
        if self.stride > self.mask_size {
            return Err(Error::Config(format!(
                "stride {} > mask_size {} leaves samples uncovered",
                self.stride, self.mask_size
            )));
        }
        if self.mask_size > signal_len {
            return Err(Error::Config(format!("mask_size {} exceeds signal length {signal_len}", self.mask_size)));
        }
        if !self.mask_value.is_finite() {
            return Err(Error::Config("mask_value must be finite".into()));
        }
        Ok(())
    }

    /// Half-open windows; the final one ends at `signal_len`.
    pub fn windows(&self, signal_len: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut start = 0;
        loop {
            let end = (start + self.mask_size).min(signal_len);
            out.push((start, end));
            if end == signal_len {
                break;
            }
            start += self.stride;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionMap {
    pub attributions: Vec<f64>,
    pub config: OcclusionConfig,
    pub predicted_class: usize,
    pub base_score: f64,
}

impl AttributionMap {
    pub fn len(&self) -> usize {
        self.attributions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributions.is_empty()
    }

    /// Share of positive attribution mass inside `[start, end)`.
    pub fn positive_mass_fraction(&self, start: usize, end: usize) -> f64 {
        let pos = |v: &f64| v.max(0.0);
        let total: f64 = self.attributions.iter().map(pos).sum();
        if total <= 0.0 {
            return 0.0;
        }
        self.attributions[start.min(self.len())..end.min(self.len())].iter().map(pos).sum::<f64>() / total
    }

    /// Writes `sample,attribution` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["sample", "attribution"])?;
        for (i, a) in self.attributions.iter().enumerate() {
            w.write_record([i.to_string(), a.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Line plot of the map, optionally over the (rescaled) signal.
    pub fn to_svg(&self, signal: Option<&[f64]>) -> String {
        attribution_svg(&self.attributions, signal, &format!(
            "occlusion: mask {} stride {} class {}",
            self.config.mask_size, self.config.stride, self.predicted_class
        ))
    }
}

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |b, c| if v[c] > v[b] { c } else { b })
}

/// Occlusion map of `signal` under `score_fn` (observation -> per-class
/// scores). Windows are scored concurrently.
pub fn occlusion_map<F>(score_fn: F, signal: &[f64], config: &OcclusionConfig) -> Result<AttributionMap>
where
    F: Fn(&[f64]) -> Vec<f64> + Sync,
{
    let d = signal.len();
    config.validate(d)?;
    let base = score_fn(signal);
    if base.is_empty() {
        return Err(Error::Validation("score function returned no classes".into()));
    }
    let c = argmax(&base);
    let windows = config.windows(d);
    let drops: Vec<f64> = windows
        .par_iter()
        .map(|&(s, e)| {
            let mut masked = signal.to_vec();
            masked[s..e].iter_mut().for_each(|v| *v = config.mask_value);
            base[c] - score_fn(&masked)[c]
        })
        .collect();
    let mut sum = vec![0.0; d];
    let mut count = vec![0usize; d];
    for (&(s, e), drop) in windows.iter().zip(&drops) {
        for t in s..e {
            sum[t] += drop;
            count[t] += 1;
        }
    }
    let attributions = sum.iter().zip(&count).map(|(s, &n)| s / n as f64).collect();
    Ok(AttributionMap { attributions, config: *config, predicted_class: c, base_score: base[c] })
}

/// One map per valid `(mask, stride)` pair, in input order (mask-major).
/// Pairs with `stride > mask`, `mask > d` or `mask > 1000` are skipped.
pub fn occlusion_grid_search<F>(score_fn: F, signal: &[f64], mask_sizes: &[usize], strides: &[usize]) -> Result<Vec<AttributionMap>>
where
    F: Fn(&[f64]) -> Vec<f64> + Sync,
{
    occlusion_grid_search_with(score_fn, signal, mask_sizes, strides, 0.0)
}

/// [`occlusion_grid_search`] with an explicit replacement value.
pub fn occlusion_grid_search_with<F>(
    score_fn: F,
    signal: &[f64],
    mask_sizes: &[usize],
    strides: &[usize],
    mask_value: f64,
) -> Result<Vec<AttributionMap>>
where
    F: Fn(&[f64]) -> Vec<f64> + Sync,
{
    let mut maps = Vec::new();
    for &m in mask_sizes {
        for &s in strides {
            let cfg = OcclusionConfig { mask_value, ..OcclusionConfig::new(m, s) };
            if m > MAX_GRID_MASK || cfg.validate(signal.len()).is_err() {
                log::info!("occlusion grid: skipping mask {m} stride {s}");
                continue;
            }
            maps.push(occlusion_map(&score_fn, signal, &cfg)?);
        }
    }
    if maps.is_empty() {
        return Err(Error::Config("no valid (mask, stride) combination".into()));
    }
    Ok(maps)
}

/// Half-open window of length `window` with the largest summed attribution.
/// Among equal sums the window whose centre is closest to the mass centroid
/// inside it wins, then the earliest.
pub fn attribution_peak_region(map: &AttributionMap, window: usize) -> (usize, usize) {
    peak_region(&map.attributions, window)
}

pub fn peak_region(values: &[f64], window: usize) -> (usize, usize) {
    let d = values.len();
    if d == 0 {
        return (0, 0);
    }
    let w = window.clamp(1, d);
    let mut prefix = vec![0.0; d + 1];
    let mut moment = vec![0.0; d + 1];
    for i in 0..d {
        prefix[i + 1] = prefix[i] + values[i];
        moment[i + 1] = moment[i] + i as f64 * values[i];
    }
    let sums: Vec<f64> = (0..=d - w).map(|s| prefix[s + w] - prefix[s]).collect();
    let top = sums.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tol = 1e-12 * prefix.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let offset = |s: usize| {
        let mass = sums[s];
        if mass.abs() <= tol {
            return 0.0;
        }
        let centroid = (moment[s + w] - moment[s]) / mass;
        (centroid - (s as f64 + (w as f64 - 1.0) / 2.0)).abs()
    };
    let mut best: Option<(usize, f64)> = None;
    for s in 0..sums.len() {
        if top - sums[s] > tol {
            continue;
        }
        let off = offset(s);
        if best.is_none_or(|(_, b)| off < b - 1e-9) {
            best = Some((s, off));
        }
    }
    let start = best.map_or(0, |b| b.0);
    (start, start + w)
}

/// Minimal standalone SVG line plot; the signal, if given, is drawn rescaled
/// to the attribution range in grey.
pub fn attribution_svg(values: &[f64], signal: Option<&[f64]>, title: &str) -> String {
    let (w, h, pad) = (800.0, 300.0, 40.0);
    let range = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi > lo { (lo, hi) } else { (lo - 1.0, lo + 1.0) }
    };
    let (lo, hi) = range(values);
    let n = values.len().max(2) as f64;
    let path = |v: &[f64], lo: f64, hi: f64| {
        let mut s = String::new();
        for (i, &y) in v.iter().enumerate() {
            let px = pad + (w - 2.0 * pad) * i as f64 / (n - 1.0);
            let py = h - pad - (h - 2.0 * pad) * (y - lo) / (hi - lo);
            let _ = write!(s, "{}{px:.2},{py:.2} ", if i == 0 { "M" } else { "L" });
        }
        s
    };
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{pad}" y="20" font-family="sans-serif" font-size="14">{}</text>"#, escape(title));
    if let Some(sig) = signal {
        let (slo, shi) = range(sig);
        let _ = writeln!(svg, r##"<path d="{}" fill="none" stroke="#bbbbbb" stroke-width="1"/>"##, path(sig, slo, shi));
    }
    let _ = writeln!(svg, r##"<path d="{}" fill="none" stroke="#c0392b" stroke-width="1.5"/>"##, path(values, lo, hi));
    let _ = writeln!(svg, r##"<text x="{pad}" y="{}" font-family="sans-serif" font-size="11">sample 0..{}, attribution {lo:.3e}..{hi:.3e}</text>"##, h - 10.0, values.len());
    svg.push_str("</svg>\n");
    svg
}

pub(crate) fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
