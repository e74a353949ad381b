//! Labeled signal corpora: CSV ingestion, a synthetic domain-shift
//! generator and z-score normalization.
//!
//! CSV layout: a header `label,group,s0,s1,...,s{d-1}` followed by one
//! observation per row. Label and group strings are remapped to contiguous
//! ids in order of first appearance unless a sidecar metadata file fixes the
//! order. The sidecar lives next to the CSV as `<stem>.meta.json`:
//!
//! ```json
//! { "sample_rate_hz": 1000.0, "class_names": ["ok", "fault"], "group_names": ["g0", "g1"] }
//! ```
//!
//! All sidecar fields are optional.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Guard below which a standard deviation counts as zero.
pub const STD_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSignalSet {
    signals: Matrix,
    labels: Vec<usize>,
    groups: Vec<usize>,
    pub sample_rate: f64,
    class_names: Vec<String>,
    group_names: Vec<String>,
}

impl LabeledSignalSet {
    /// Validates every corpus invariant.
    pub fn new(
        signals: Matrix,
        labels: Vec<usize>,
        groups: Vec<usize>,
        sample_rate: f64,
        class_names: Vec<String>,
        group_names: Vec<String>,
    ) -> Result<Self> {
        let n = signals.rows();
        if labels.len() != n || groups.len() != n {
            return Err(Error::Validation(format!(
                "{} signals, {} labels, {} groups",
                n,
                labels.len(),
                groups.len()
            )));
        }
        if n == 0 {
            return Err(Error::Validation("empty corpus".into()));
        }
        if signals.cols() < 2 {
            return Err(Error::Validation(format!(
                "signal length {} < 2",
                signals.cols()
            )));
        }
        if !signals.is_finite() {
            return Err(Error::Validation("non-finite sample value".into()));
        }
        let num_classes = class_names.len();
        if num_classes < 2 {
            return Err(Error::Validation(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        let mut seen = vec![false; num_classes];
        for &l in &labels {
            if l >= num_classes {
                return Err(Error::Validation(format!("label id {l} out of range")));
            }
            seen[l] = true;
        }
        if let Some(c) = seen.iter().position(|s| !s) {
            return Err(Error::Validation(format!(
                "class '{}' has no observations",
                class_names[c]
            )));
        }
        if group_names.is_empty() || groups.iter().any(|&g| g >= group_names.len()) {
            return Err(Error::Validation("group id out of range".into()));
        }
        Ok(Self {
            signals,
            labels,
            groups,
            sample_rate,
            class_names,
            group_names,
        })
    }

    pub fn len(&self) -> usize {
        self.signals.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn signal_len(&self) -> usize {
        self.signals.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn num_groups(&self) -> usize {
        self.group_names.len()
    }

    pub fn signals(&self) -> &Matrix {
        &self.signals
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn groups(&self) -> &[usize] {
        &self.groups
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn group_names(&self) -> &[String] {
        &self.group_names
    }

    /// Rows picked by index. The class and group catalogs are kept whole, so a
    /// subset may lack some classes entirely.
    pub fn subset(&self, idx: &[usize]) -> LabeledSignalSet {
        LabeledSignalSet {
            signals: self.signals.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            groups: idx.iter().map(|&i| self.groups[i]).collect(),
            sample_rate: self.sample_rate,
            class_names: self.class_names.clone(),
            group_names: self.group_names.clone(),
        }
    }

    /// Same labels and groups with replaced signal values.
    pub fn with_signals(&self, signals: Matrix) -> Result<LabeledSignalSet> {
        if signals.rows() != self.len() {
            return Err(Error::dim(self.len(), signals.rows()));
        }
        Ok(LabeledSignalSet {
            signals,
            ..self.clone()
        })
    }

    pub(crate) fn signals_mut(&mut self) -> &mut Matrix {
        &mut self.signals
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Sidecar {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sample_rate_hz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    class_names: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    group_names: Option<Vec<String>>,
}

/// `data.csv` -> `data.meta.json`
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("meta.json")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalFormat {
    Csv,
}

pub fn load_signal_set(path: &Path, format: SignalFormat) -> Result<LabeledSignalSet> {
    match format {
        SignalFormat::Csv => load_csv(path),
    }
}

fn load_csv(path: &Path) -> Result<LabeledSignalSet> {
    let sidecar: Sidecar = match std::fs::read_to_string(sidecar_path(path)) {
        Ok(text) => serde_json::from_str(&text)
            .map_err(|e| Error::Schema(format!("sidecar metadata: {e}")))?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Sidecar::default(),
        Err(e) => return Err(e.into()),
    };
    let file = std::fs::File::open(path)?;
    read_csv(file, sidecar)
}

fn read_csv<R: std::io::Read>(reader: R, sidecar: Sidecar) -> Result<LabeledSignalSet> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.len() < 2
        || !header[0].eq_ignore_ascii_case("label")
        || !header[1].eq_ignore_ascii_case("group")
    {
        return Err(Error::Schema(
            "header must start with `label,group` columns".into(),
        ));
    }
    let d = header.len() - 2;
    if d < 2 {
        return Err(Error::Schema(format!("need at least 2 signal columns, got {d}")));
    }

    let mut class_ids = IdMap::new(sidecar.class_names);
    let mut group_ids = IdMap::new(sidecar.group_names);
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut groups = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = line + 2;
        if rec.len() != header.len() {
            return Err(Error::Schema(format!(
                "row {row}: {} signal values, header declares {d}",
                rec.len().saturating_sub(2)
            )));
        }
        labels.push(class_ids.id(&rec[0]).map_err(|e| Error::Schema(format!("row {row}: {e}")))?);
        groups.push(group_ids.id(&rec[1]).map_err(|e| Error::Schema(format!("row {row}: {e}")))?);
        for (j, field) in rec.iter().skip(2).enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                Error::Schema(format!("row {row}, column s{j}: cannot parse {field:?}"))
            })?;
            data.push(v);
        }
    }
    let n = labels.len();
    let signals = Matrix::from_vec(n, d, data)?;
    LabeledSignalSet::new(
        signals,
        labels,
        groups,
        sidecar.sample_rate_hz.unwrap_or(1.0),
        class_ids.names,
        group_ids.names,
    )
}

struct IdMap {
    names: Vec<String>,
    index: HashMap<String, usize>,
    fixed: bool,
}

impl IdMap {
    fn new(names: Option<Vec<String>>) -> Self {
        let fixed = names.is_some();
        let names = names.unwrap_or_default();
        let index = names.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Self { names, index, fixed }
    }

    fn id(&mut self, name: &str) -> std::result::Result<usize, String> {
        if name.is_empty() {
            return Err("empty label/group value".into());
        }
        if let Some(&i) = self.index.get(name) {
            return Ok(i);
        }
        if self.fixed {
            return Err(format!("{name:?} not listed in sidecar metadata"));
        }
        let i = self.names.len();
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), i);
        Ok(i)
    }
}

/// Writes the CSV plus its sidecar. Values use the shortest representation
/// that parses back to the identical `f64`.
pub fn write_signal_set(set: &LabeledSignalSet, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let d = set.signal_len();
    let mut header = vec!["label".to_string(), "group".to_string()];
    header.extend((0..d).map(|j| format!("s{j}")));
    w.write_record(&header)?;
    for i in 0..set.len() {
        let mut rec = Vec::with_capacity(d + 2);
        rec.push(set.class_names[set.labels[i]].clone());
        rec.push(set.group_names[set.groups[i]].clone());
        rec.extend(set.signals.row(i).iter().map(|v| format!("{v:?}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    let sidecar = Sidecar {
        sample_rate_hz: Some(set.sample_rate),
        class_names: Some(set.class_names.clone()),
        group_names: Some(set.group_names.clone()),
    };
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticShiftSpec {
    pub num_classes: usize,
    pub num_groups: usize,
    pub n_per_cell: usize,
    pub signal_len: usize,
    pub class_effect: f64,
    pub group_effect: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticShiftSpec {
    fn default() -> Self {
        Self {
            num_classes: 3,
            num_groups: 4,
            n_per_cell: 40,
            signal_len: 512,
            class_effect: 1.0,
            group_effect: 3.0,
            noise_std: 1.0,
            seed: 7,
        }
    }
}

impl SyntheticShiftSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Validation(m.to_string()));
        if self.num_classes < 2 {
            return bad("num_classes must be >= 2");
        }
        if self.num_groups < 2 {
            return bad("num_groups must be >= 2");
        }
        if self.n_per_cell < 1 {
            return bad("n_per_cell must be >= 1");
        }
        if self.signal_len < 8 {
            return bad("signal_len must be >= 8");
        }
        if !(self.noise_std >= 0.0) || !self.class_effect.is_finite() || !self.group_effect.is_finite() {
            return bad("noise_std must be >= 0 and effects finite");
        }
        Ok(())
    }

    /// Half-open sample range carrying the class signature: the central 25%.
    pub fn signature_window(&self) -> (usize, usize) {
        signature_window(self.signal_len)
    }
}

pub fn signature_window(d: usize) -> (usize, usize) {
    let len = (d / 4).max(2);
    let start = (d - len) / 2;
    (start, start + len)
}

/// Hann-tapered burst with `2 + c` cycles across the signature window.
fn class_signature(c: usize, u: f64) -> f64 {
    let taper = 0.5 - 0.5 * (2.0 * PI * u).cos();
    taper * (2.0 * PI * (2.0 + c as f64) * u).sin()
}

struct GroupShift {
    offset: f64,
    drift_amp: f64,
    drift_cycles: f64,
    drift_phase: f64,
    /// Per-class weights of the signature region warp; zero-sum across classes.
    warp: Vec<f64>,
}

/// Generates `num_classes * num_groups * n_per_cell` observations.
///
/// Each signal is a fixed base waveform, plus `class_effect` times a
/// class-specific burst confined to [`signature_window`], plus `group_effect`
/// times a group-specific shift, plus white Gaussian noise. The group shift
/// combines a constant offset, a slow drift over the whole signal and a warp
/// of the signature region that mixes in other classes' bursts. A model that
/// has seen a group during training can undo its shift; an unseen group's
/// warp pushes observations towards other classes.
///
/// Rows are ordered group-major, then class, then replicate.
pub fn generate_synthetic_shift(spec: &SyntheticShiftSpec) -> Result<LabeledSignalSet> {
    spec.validate()?;
    let (c_n, g_n, d) = (spec.num_classes, spec.num_groups, spec.signal_len);
    let (w0, w1) = spec.signature_window();
    let wlen = (w1 - w0) as f64;

    let mut group_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let shifts: Vec<GroupShift> = (0..g_n)
        .map(|_| {
            let mut warp: Vec<f64> = (0..c_n).map(|_| group_rng.random_range(-1.0..1.0)).collect();
            let m = warp.iter().sum::<f64>() / c_n as f64;
            warp.iter_mut().for_each(|w| *w -= m);
            GroupShift {
                offset: group_rng.random_range(-1.0..1.0),
                drift_amp: group_rng.random_range(0.5..1.0),
                drift_cycles: group_rng.random_range(1..=4) as f64,
                drift_phase: group_rng.random_range(0.0..2.0 * PI),
                warp,
            }
        })
        .collect();

    let base: Vec<f64> = (0..d)
        .map(|t| 0.5 * (2.0 * PI * 3.0 * t as f64 / d as f64).sin())
        .collect();
    let sig = |c: usize, t: usize| -> f64 {
        if (w0..w1).contains(&t) {
            class_signature(c, (t - w0) as f64 / wlen)
        } else {
            0.0
        }
    };

    let mut noise_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e37_79b9_7f4a_7c15);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let n = c_n * g_n * spec.n_per_cell;
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    let mut groups = Vec::with_capacity(n);
    for (g, sh) in shifts.iter().enumerate() {
        let template: Vec<Vec<f64>> = (0..c_n)
            .map(|c| {
                (0..d)
                    .map(|t| {
                        let drift = sh.drift_amp
                            * (2.0 * PI * sh.drift_cycles * t as f64 / d as f64 + sh.drift_phase).sin();
                        let warp: f64 = (0..c_n).map(|k| sh.warp[k] * sig(k, t)).sum();
                        base[t] + spec.class_effect * sig(c, t) + spec.group_effect * (sh.offset + drift + warp)
                    })
                    .collect()
            })
            .collect();
        for (c, tpl) in template.iter().enumerate() {
            for _ in 0..spec.n_per_cell {
                if spec.noise_std > 0.0 {
                    data.extend(tpl.iter().map(|&v| v + spec.noise_std * normal.sample(&mut noise_rng)));
                } else {
                    data.extend_from_slice(tpl);
                }
                labels.push(c);
                groups.push(g);
            }
        }
    }
    LabeledSignalSet::new(
        Matrix::from_vec(n, d, data)?,
        labels,
        groups,
        1.0,
        (0..c_n).map(|c| format!("class{c}")).collect(),
        (0..g_n).map(|g| format!("group{g}")).collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormDim {
    /// Each sample position standardized across observations.
    Element,
    /// One mean and standard deviation over every sample of every signal.
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "dim")]
pub enum Normalization {
    #[default]
    None,
    Zscore(NormDim),
}

/// Normalization statistics estimated on one matrix and reusable on others.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mode: Normalization,
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl Normalizer {
    /// Population (1/n) statistics.
    pub fn fit(mode: Normalization, x: &Matrix) -> Self {
        let (mean, std) = match mode {
            Normalization::None => (vec![], vec![]),
            Normalization::Zscore(NormDim::All) => {
                let v = x.as_slice();
                let (m, s) = mean_std(v.iter().copied());
                (vec![m], vec![s])
            }
            Normalization::Zscore(NormDim::Element) => (0..x.cols())
                .map(|j| mean_std((0..x.rows()).map(|i| x.get(i, j))))
                .unzip(),
        };
        Self { mode, mean, std }
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        let mut out = x.clone();
        match self.mode {
            Normalization::None => {}
            Normalization::Zscore(NormDim::All) => {
                let (m, s) = (self.mean[0], self.std[0]);
                out.as_mut_slice().iter_mut().for_each(|v| *v = standardize(*v, m, s));
            }
            Normalization::Zscore(NormDim::Element) => {
                if x.cols() != self.mean.len() {
                    return Err(Error::dim(self.mean.len(), x.cols()));
                }
                for r in 0..out.rows() {
                    for (j, v) in out.row_mut(r).iter_mut().enumerate() {
                        *v = standardize(*v, self.mean[j], self.std[j]);
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn apply_row(&self, x: &[f64]) -> Vec<f64> {
        match self.mode {
            Normalization::None => x.to_vec(),
            Normalization::Zscore(NormDim::All) => {
                x.iter().map(|&v| standardize(v, self.mean[0], self.std[0])).collect()
            }
            Normalization::Zscore(NormDim::Element) => x
                .iter()
                .enumerate()
                .map(|(j, &v)| standardize(v, self.mean[j], self.std[j]))
                .collect(),
        }
    }
}

#[inline]
fn standardize(v: f64, mean: f64, std: f64) -> f64 {
    if std < STD_EPS {
        0.0
    } else {
        (v - mean) / std
    }
}

pub(crate) fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let mut n = 0usize;
    let mut sum = 0.0;
    for v in values.clone() {
        sum += v;
        n += 1;
    }
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = sum / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

/// Standardizes the corpus with statistics computed on itself.
pub fn zscore_normalize(set: &LabeledSignalSet, dim: NormDim) -> LabeledSignalSet {
    let norm = Normalizer::fit(Normalization::Zscore(dim), set.signals());
    let mut out = set.clone();
    *out.signals_mut() = norm.apply(set.signals()).expect("fitted on the same matrix");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv_set(text: &str) -> Result<LabeledSignalSet> {
        read_csv(text.as_bytes(), Sidecar::default())
    }

    #[test]
    fn load_counts_rows_and_columns() {
        let s = csv_set("label,group,s0,s1,s2,s3\nok,a,1,2,3,4\nbad,b,0.5,0.25,-1,2e3\n").unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.signal_len(), 4);
        assert_eq!(s.class_names(), &["ok".to_string(), "bad".to_string()]);
        assert_eq!(s.signals().get(1, 3), 2000.0);
    }

    #[test]
    fn ragged_rows_are_schema_errors() {
        let e = csv_set("label,group,s0,s1,s2,s3\nok,a,1,2,3,4\nbad,a,1,2,3,4,5\n").unwrap_err();
        assert!(matches!(e, Error::Schema(_)), "{e}");
    }

    #[test]
    fn missing_group_column_is_schema_error() {
        let e = csv_set("label,s0,s1\nok,1,2\n").unwrap_err();
        assert!(matches!(e, Error::Schema(_)), "{e}");
    }

    #[test]
    fn single_class_is_validation_error() {
        let e = csv_set("label,group,s0,s1\nok,a,1,2\nok,b,3,4\n").unwrap_err();
        assert!(matches!(e, Error::Validation(_)), "{e}");
    }

    #[test]
    fn generator_cell_counts() {
        let spec = SyntheticShiftSpec {
            num_classes: 2,
            num_groups: 3,
            n_per_cell: 10,
            signal_len: 64,
            ..Default::default()
        };
        let s = generate_synthetic_shift(&spec).unwrap();
        assert_eq!(s.len(), 60);
        let mut cells = [[0usize; 3]; 2];
        for i in 0..s.len() {
            cells[s.labels()[i]][s.groups()[i]] += 1;
        }
        assert!(cells.iter().flatten().all(|&c| c == 10));
    }

    #[test]
    fn generator_without_noise_or_shift_is_class_constant() {
        let spec = SyntheticShiftSpec {
            noise_std: 0.0,
            group_effect: 0.0,
            signal_len: 64,
            n_per_cell: 3,
            ..Default::default()
        };
        let s = generate_synthetic_shift(&spec).unwrap();
        for i in 0..s.len() {
            for j in 0..s.len() {
                if s.labels()[i] == s.labels()[j] {
                    assert_eq!(s.signals().row(i), s.signals().row(j));
                }
            }
        }
    }

    #[test]
    fn generator_is_deterministic() {
        let spec = SyntheticShiftSpec {
            signal_len: 64,
            n_per_cell: 4,
            ..Default::default()
        };
        let a = generate_synthetic_shift(&spec).unwrap();
        let b = generate_synthetic_shift(&spec).unwrap();
        assert_eq!(a.signals().as_slice(), b.signals().as_slice());
    }

    #[test]
    fn signature_confined_to_central_quarter() {
        let spec = SyntheticShiftSpec {
            noise_std: 0.0,
            group_effect: 0.0,
            signal_len: 512,
            n_per_cell: 1,
            ..Default::default()
        };
        assert_eq!(spec.signature_window(), (192, 320));
        let s = generate_synthetic_shift(&spec).unwrap();
        let (a, b) = (s.signals().row(0), s.signals().row(1));
        for t in (0..192).chain(320..512) {
            assert_eq!(a[t], b[t]);
        }
    }

    #[test]
    fn invalid_spec_rejected() {
        let spec = SyntheticShiftSpec {
            signal_len: 4,
            ..Default::default()
        };
        assert!(generate_synthetic_shift(&spec).is_err());
    }

    #[test]
    fn zscore_element_hand_example() {
        let set = LabeledSignalSet::new(
            Matrix::from_rows(&[vec![0.0, 0.0], vec![2.0, 2.0]]).unwrap(),
            vec![0, 1],
            vec![0, 0],
            1.0,
            vec!["a".into(), "b".into()],
            vec!["g".into()],
        )
        .unwrap();
        let z = zscore_normalize(&set, NormDim::Element);
        assert_eq!(z.signals().row(0), &[-1.0, -1.0]);
        assert_eq!(z.signals().row(1), &[1.0, 1.0]);
    }

    #[test]
    fn zscore_constant_corpus_maps_to_zero() {
        let set = LabeledSignalSet::new(
            Matrix::from_rows(&[vec![3.0; 4], vec![3.0; 4]]).unwrap(),
            vec![0, 1],
            vec![0, 0],
            1.0,
            vec!["a".into(), "b".into()],
            vec!["g".into()],
        )
        .unwrap();
        for dim in [NormDim::All, NormDim::Element] {
            let z = zscore_normalize(&set, dim);
            assert!(z.signals().as_slice().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn zscore_all_centres_globally() {
        let s = generate_synthetic_shift(&SyntheticShiftSpec {
            signal_len: 32,
            n_per_cell: 3,
            ..Default::default()
        })
        .unwrap();
        let z = zscore_normalize(&s, NormDim::All);
        let (m, sd) = mean_std(z.signals().as_slice().iter().copied());
        assert!(m.abs() < 1e-9);
        assert!((sd - 1.0).abs() < 1e-9);
    }
}
