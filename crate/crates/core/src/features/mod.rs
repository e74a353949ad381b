//! Feature extraction: seven fit-on-train / apply-to-any extractors that map
//! length-`d` signals to a fixed-width feature table.
//!
//! | id      | features                                                     |
//! |---------|--------------------------------------------------------------|
//! | ALA     | `(mean, slope)` per adaptive linear segment, `2 * n_segments` |
//! | BFC     | DFT magnitudes of the `n_kept` strongest training bins        |
//! | BDW     | the `n_kept` strongest training db4 wavelet coefficients      |
//! | TFEx    | 10 time-domain + 6 frequency-domain statistics                |
//! | NoFE    | raw samples                                                   |
//! | PCA     | scores on the leading training principal components           |
//! | StatMom | mean, variance, skewness, kurtosis per equal segment          |

pub mod ala;
pub mod spectral;
pub mod stats;
pub mod wavelet;

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::LabeledSignalSet;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use spectral::{Spectrum, TFEX_FIRST_SPECTRAL, TFEX_NAMES};

pub const DEFAULT_SEGMENTS: usize = 10;
pub const DEFAULT_KEPT: usize = 64;
pub const DEFAULT_PCA_COMPONENTS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FeMethod {
    #[serde(rename = "ALA")]
    Ala,
    #[serde(rename = "BFC")]
    Bfc,
    #[serde(rename = "BDW")]
    Bdw,
    #[serde(rename = "TFEx")]
    Tfex,
    #[serde(rename = "NoFE")]
    NoFe,
    #[serde(rename = "PCA")]
    Pca,
    #[serde(rename = "StatMom")]
    StatMom,
}

impl FeMethod {
    /// Catalog order.
    pub const ALL: [FeMethod; 7] = [
        FeMethod::Ala,
        FeMethod::Bfc,
        FeMethod::Bdw,
        FeMethod::Tfex,
        FeMethod::NoFe,
        FeMethod::Pca,
        FeMethod::StatMom,
    ];

    pub fn id(self) -> &'static str {
        match self {
            FeMethod::Ala => "ALA",
            FeMethod::Bfc => "BFC",
            FeMethod::Bdw => "BDW",
            FeMethod::Tfex => "TFEx",
            FeMethod::NoFe => "NoFE",
            FeMethod::Pca => "PCA",
            FeMethod::StatMom => "StatMom",
        }
    }

    pub fn from_id(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.id().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for FeMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

/// Extractor choice plus optional overrides of its defaults.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ExtractorSpec {
    pub method: FeMethod,
    /// StatMom and ALA segment count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_segments: Option<usize>,
    /// BFC and BDW retained coefficient count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_kept: Option<usize>,
    /// PCA component cap.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_components: Option<usize>,
}

impl ExtractorSpec {
    pub fn new(method: FeMethod) -> Self {
        Self {
            method,
            n_segments: None,
            n_kept: None,
            max_components: None,
        }
    }

    pub fn with_segments(mut self, n: usize) -> Self {
        self.n_segments = Some(n);
        self
    }

    pub fn with_kept(mut self, n: usize) -> Self {
        self.n_kept = Some(n);
        self
    }

    pub fn with_max_components(mut self, n: usize) -> Self {
        self.max_components = Some(n);
        self
    }
}

impl From<FeMethod> for ExtractorSpec {
    fn from(m: FeMethod) -> Self {
        ExtractorSpec::new(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ExtractorState {
    Ala { spans: Vec<(usize, usize)> },
    Bfc { bins: Vec<usize> },
    Bdw { levels: usize, selected: Vec<usize> },
    Tfex,
    NoFe,
    Pca {
        mean: Vec<f64>,
        /// One component per row, unit norm.
        components: Matrix,
        eigenvalues: Vec<f64>,
        total_variance: f64,
    },
    StatMom { spans: Vec<(usize, usize)> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedExtractor {
    pub spec: ExtractorSpec,
    signal_len: usize,
    num_features: usize,
    pub state: ExtractorState,
}

/// Signal region a feature can be traced back to. Sample ranges are inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SignalRegion {
    Samples { start: usize, end: usize },
    FrequencyBin { bin: usize },
    /// A statistic of the whole one-sided spectrum.
    Spectrum { first_bin: usize, last_bin: usize },
    WaveletSupport { level: usize, start: usize, end: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub values: Matrix,
    pub feature_names: Vec<String>,
    pub extractor_id: String,
}

impl FeatureMatrix {
    pub fn num_features(&self) -> usize {
        self.values.cols()
    }

    /// Header = feature names, one observation per row.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.feature_names)?;
        for row in self.values.iter_rows() {
            w.write_record(row.iter().map(|v| format!("{v:?}")))?;
        }
        w.flush()?;
        Ok(())
    }
}

fn equal_spans(d: usize, n: usize) -> Vec<(usize, usize)> {
    (0..n).map(|j| (j * d / n, (j + 1) * d / n)).collect()
}

fn top_by_mean_abs(rows: impl Iterator<Item = Vec<f64>>, width: usize, keep: usize) -> Vec<usize> {
    let mut acc = vec![0.0; width];
    for r in rows {
        for (a, v) in acc.iter_mut().zip(r) {
            *a += v.abs();
        }
    }
    let mut idx: Vec<usize> = (0..width).collect();
    idx.sort_by(|&a, &b| acc[b].total_cmp(&acc[a]).then(a.cmp(&b)));
    idx.truncate(keep);
    idx
}

fn clamp_kept(requested: usize, available: usize, what: &str) -> usize {
    if requested > available {
        log::warn!("{what}: n_kept {requested} exceeds {available} available coefficients, clamped");
        available
    } else {
        requested
    }
}

/// Fits an extractor on the training observations; labels are not used.
pub fn fit_extractor(spec: &ExtractorSpec, train: &LabeledSignalSet) -> Result<FittedExtractor> {
    fit_on_signals(spec, train.signals())
}

pub fn fit_on_signals(spec: &ExtractorSpec, train: &Matrix) -> Result<FittedExtractor> {
    let d = train.cols();
    let n = train.rows();
    if n == 0 {
        return Err(Error::Validation("cannot fit an extractor on zero signals".into()));
    }
    let mut spec = *spec;
    let segments = |spec: &mut ExtractorSpec| -> Result<usize> {
        let s = spec.n_segments.unwrap_or(DEFAULT_SEGMENTS.min(d));
        if s == 0 || s > d {
            return Err(Error::UnsupportedMethod(format!(
                "{}: n_segments {s} not in [1, {d}]",
                spec.method
            )));
        }
        spec.n_segments = Some(s);
        Ok(s)
    };
    let kept = |spec: &mut ExtractorSpec, default: usize, available: usize| -> Result<usize> {
        let k = spec.n_kept.unwrap_or(default);
        if k == 0 {
            return Err(Error::UnsupportedMethod(format!("{}: n_kept must be >= 1", spec.method)));
        }
        let k = clamp_kept(k, available, spec.method.id());
        spec.n_kept = Some(k);
        Ok(k)
    };

    let (state, p) = match spec.method {
        FeMethod::StatMom => {
            let s = segments(&mut spec)?;
            (ExtractorState::StatMom { spans: equal_spans(d, s) }, 4 * s)
        }
        FeMethod::Ala => {
            let s = segments(&mut spec)?;
            let spans = ala::segment(train.iter_rows(), d, s);
            let p = 2 * spans.len();
            (ExtractorState::Ala { spans }, p)
        }
        FeMethod::Bfc => {
            let spectrum = Spectrum::new(d);
            let k = kept(&mut spec, (d / 2).clamp(1, DEFAULT_KEPT), spectrum.bins())?;
            let bins = top_by_mean_abs(
                train.iter_rows().map(|r| spectrum.magnitudes(r)),
                spectrum.bins(),
                k,
            );
            (ExtractorState::Bfc { bins }, k)
        }
        FeMethod::Bdw => {
            if d < 4 {
                return Err(Error::UnsupportedMethod(format!(
                    "BDW needs signals of at least 4 samples, got {d}"
                )));
            }
            let levels = wavelet::max_level(d);
            let k = kept(&mut spec, d.min(DEFAULT_KEPT), d)?;
            let selected = top_by_mean_abs(
                train.iter_rows().map(|r| wavelet::decompose(r, levels)),
                d,
                k,
            );
            (ExtractorState::Bdw { levels, selected }, k)
        }
        FeMethod::Tfex => (ExtractorState::Tfex, TFEX_NAMES.len()),
        FeMethod::NoFe => (ExtractorState::NoFe, d),
        FeMethod::Pca => {
            let cap = spec.max_components.unwrap_or(DEFAULT_PCA_COMPONENTS);
            spec.max_components = Some(cap);
            let p = d.min(n.saturating_sub(1)).min(cap);
            if p == 0 {
                return Err(Error::UnsupportedMethod(format!(
                    "PCA needs at least 2 training signals and max_components >= 1 (n={n})"
                )));
            }
            (fit_pca(train, p), p)
        }
    };
    Ok(FittedExtractor {
        spec,
        signal_len: d,
        num_features: p,
        state,
    })
}

fn fit_pca(train: &Matrix, p: usize) -> ExtractorState {
    let (n, d) = (train.rows(), train.cols());
    let mut mean = vec![0.0; d];
    for r in train.iter_rows() {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut centred = train.to_nalgebra();
    for i in 0..n {
        for j in 0..d {
            centred[(i, j)] -= mean[j];
        }
    }
    let cov = centred.transpose() * &centred / (n as f64 - 1.0);
    let eig = nalgebra::SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let total_variance: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let mut components = Matrix::zeros(p, d);
    let mut eigenvalues = Vec::with_capacity(p);
    for (row, &k) in order.iter().take(p).enumerate() {
        let v = eig.eigenvectors.column(k);
        // sign convention: largest-magnitude loading positive
        let pivot = (0..d)
            .max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()).then(b.cmp(&a)))
            .unwrap_or(0);
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..d {
            components.set(row, j, sign * v[j]);
        }
        eigenvalues.push(eig.eigenvalues[k].max(0.0));
    }
    ExtractorState::Pca {
        mean,
        components,
        eigenvalues,
        total_variance,
    }
}

impl FittedExtractor {
    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn signal_len(&self) -> usize {
        self.signal_len
    }

    pub fn id(&self) -> &'static str {
        self.spec.method.id()
    }

    /// Fraction of training variance carried by each retained PCA component.
    pub fn explained_variance_ratio(&self) -> Option<Vec<f64>> {
        match &self.state {
            ExtractorState::Pca {
                eigenvalues,
                total_variance,
                ..
            } => Some(
                eigenvalues
                    .iter()
                    .map(|e| if *total_variance > 0.0 { e / total_variance } else { 0.0 })
                    .collect(),
            ),
            _ => None,
        }
    }

    pub fn apply(&self, signals: &Matrix) -> Result<FeatureMatrix> {
        if signals.cols() != self.signal_len {
            return Err(Error::dim(self.signal_len, signals.cols()));
        }
        let p = self.num_features;
        let mut values = Matrix::zeros(signals.rows(), p);
        let spectrum = match self.state {
            ExtractorState::Bfc { .. } | ExtractorState::Tfex => Some(Spectrum::new(self.signal_len)),
            _ => None,
        };
        for (i, x) in signals.iter_rows().enumerate() {
            let out = values.row_mut(i);
            match &self.state {
                ExtractorState::StatMom { spans } => {
                    for (j, &(a, b)) in spans.iter().enumerate() {
                        let m = stats::moments(&x[a..b]);
                        out[4 * j..4 * j + 4].copy_from_slice(&[m.mean, m.variance, m.skewness, m.kurtosis]);
                    }
                }
                ExtractorState::Ala { spans } => {
                    for (j, &span) in spans.iter().enumerate() {
                        let (mean, slope, _) = ala::line_fit(x, span);
                        out[2 * j] = mean;
                        out[2 * j + 1] = slope;
                    }
                }
                ExtractorState::Bfc { bins } => {
                    let mag = spectrum.as_ref().expect("planned").magnitudes(x);
                    for (o, &k) in out.iter_mut().zip(bins) {
                        *o = mag[k];
                    }
                }
                ExtractorState::Bdw { levels, selected } => {
                    let c = wavelet::decompose(x, *levels);
                    for (o, &k) in out.iter_mut().zip(selected) {
                        *o = c[k];
                    }
                }
                ExtractorState::Tfex => {
                    out.copy_from_slice(&spectral::tfex(x, spectrum.as_ref().expect("planned")));
                }
                ExtractorState::NoFe => out.copy_from_slice(x),
                ExtractorState::Pca { mean, components, .. } => {
                    let centred: Vec<f64> = x.iter().zip(mean).map(|(v, m)| v - m).collect();
                    for (o, comp) in out.iter_mut().zip(components.iter_rows()) {
                        *o = crate::matrix::dot(comp, &centred);
                    }
                }
            }
        }
        if !values.is_finite() {
            return Err(Error::Validation(format!("{} produced non-finite features", self.id())));
        }
        Ok(FeatureMatrix {
            values,
            feature_names: self.feature_names(),
            extractor_id: self.id().to_string(),
        })
    }

    pub fn feature_names(&self) -> Vec<String> {
        match &self.state {
            ExtractorState::StatMom { spans } => (0..spans.len())
                .flat_map(|j| ["mean", "var", "skew", "kurt"].map(|s| format!("seg{j}_{s}")))
                .collect(),
            ExtractorState::Ala { spans } => (0..spans.len())
                .flat_map(|j| ["mean", "slope"].map(|s| format!("ala{j}_{s}")))
                .collect(),
            ExtractorState::Bfc { bins } => bins.iter().map(|k| format!("fft_bin{k}")).collect(),
            ExtractorState::Bdw { levels, selected } => selected
                .iter()
                .map(|&k| {
                    let s = wavelet::slot(self.signal_len, *levels, k);
                    let band = if s.approximation { "A" } else { "D" };
                    format!("db4_{band}{}_{}", s.level, s.position)
                })
                .collect(),
            ExtractorState::Tfex => TFEX_NAMES.iter().map(|s| s.to_string()).collect(),
            ExtractorState::NoFe => (0..self.signal_len).map(|j| format!("s{j}")).collect(),
            ExtractorState::Pca { components, .. } => {
                (0..components.rows()).map(|j| format!("pc{j}")).collect()
            }
        }
    }

    /// The part of the raw signal a feature is computed from.
    pub fn trace_feature(&self, feature_index: usize) -> Result<SignalRegion> {
        if feature_index >= self.num_features {
            return Err(Error::Validation(format!(
                "feature index {feature_index} out of range (p = {})",
                self.num_features
            )));
        }
        let d = self.signal_len;
        Ok(match &self.state {
            ExtractorState::StatMom { spans } => {
                let (a, b) = spans[feature_index / 4];
                SignalRegion::Samples { start: a, end: b - 1 }
            }
            ExtractorState::Ala { spans } => {
                let (a, b) = spans[feature_index / 2];
                SignalRegion::Samples { start: a, end: b - 1 }
            }
            ExtractorState::Bfc { bins } => SignalRegion::FrequencyBin { bin: bins[feature_index] },
            ExtractorState::Bdw { levels, selected } => {
                let s = wavelet::slot(d, *levels, selected[feature_index]);
                let (start, end) = wavelet::support(d, s);
                SignalRegion::WaveletSupport { level: s.level, start, end }
            }
            ExtractorState::Tfex => {
                if feature_index == TFEX_NAMES.len() - 2 {
                    // the peak bin itself varies per signal; report the searched band
                    SignalRegion::Spectrum { first_bin: 1, last_bin: d / 2 }
                } else if feature_index >= TFEX_FIRST_SPECTRAL {
                    SignalRegion::Spectrum { first_bin: 0, last_bin: d / 2 }
                } else {
                    SignalRegion::Samples { start: 0, end: d - 1 }
                }
            }
            ExtractorState::NoFe => SignalRegion::Samples {
                start: feature_index,
                end: feature_index,
            },
            ExtractorState::Pca { components, .. } => {
                let row = components.row(feature_index);
                let peak = row.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                let strong: Vec<usize> = (0..d).filter(|&j| row[j].abs() >= 0.5 * peak).collect();
                SignalRegion::Samples {
                    start: *strong.first().unwrap_or(&0),
                    end: *strong.last().unwrap_or(&(d - 1)),
                }
            }
        })
    }
}
