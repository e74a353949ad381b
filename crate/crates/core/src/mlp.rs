//! Fully connected baseline network.
//!
//! `num_blocks` blocks of dense -> batch-norm -> ReLU, block `i` (1-based)
//! having `floor(base / (2i - 1))` units (at least 1), then dropout and a
//! softmax output layer. Trained with Adam on cross-entropy plus
//! `l2 * sum(W^2)` over dense and output weights, a piecewise-constant
//! learning rate and early stopping on a stratified 10% validation split.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{NormDim, Normalization, Normalizer};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::validation::{make_stratified_kfold, FoldPlan};

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.9;
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub num_blocks: usize,
    pub num_neurons_base: usize,
    pub dropout: f64,
    pub minibatch: usize,
    pub max_epochs: usize,
    pub l2: f64,
    pub lr0: f64,
    pub lr_drop_factor: f64,
    /// Epochs between learning-rate drops.
    pub lr_drop_period: usize,
    pub train_time_limit_s: f64,
    pub normalization: Normalization,
    pub seed: u64,
    pub early_stop_patience: usize,
    pub validation_fraction: f64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            num_blocks: 3,
            num_neurons_base: 100,
            dropout: 0.4,
            minibatch: 64,
            max_epochs: 200,
            l2: 1e-4,
            lr0: 0.004,
            lr_drop_factor: 0.8,
            lr_drop_period: 20,
            train_time_limit_s: 60.0,
            normalization: Normalization::Zscore(NormDim::Element),
            seed: 0,
            early_stop_patience: 15,
            validation_fraction: 0.1,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(3..=10).contains(&self.num_blocks) {
            return bad(format!("num_blocks {} outside [3, 10]", self.num_blocks));
        }
        if !(10..=500).contains(&self.num_neurons_base) {
            return bad(format!("num_neurons_base {} outside [10, 500]", self.num_neurons_base));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.minibatch == 0 || self.max_epochs == 0 || self.lr_drop_period == 0 {
            return bad("minibatch, max_epochs and lr_drop_period must be positive".into());
        }
        if !(self.lr0 > 0.0) || !(self.lr_drop_factor > 0.0) || !(self.l2 >= 0.0) {
            return bad("lr0 and lr_drop_factor must be positive, l2 non-negative".into());
        }
        if !(self.train_time_limit_s > 0.0) {
            return bad("train_time_limit_s must be positive".into());
        }
        if !(0.0..0.5).contains(&self.validation_fraction) {
            return bad(format!("validation_fraction {} outside [0, 0.5)", self.validation_fraction));
        }
        Ok(())
    }

    pub fn learning_rate(&self, epoch: usize) -> f64 {
        self.lr0 * self.lr_drop_factor.powi((epoch / self.lr_drop_period) as i32)
    }
}

/// Width of 1-based block `i`, clamped to at least 1.
pub fn block_width(base: usize, i: usize) -> usize {
    let w = base / (2 * i - 1);
    if w == 0 {
        log::warn!("block {i} width floor({base}/{}) = 0, clamped to 1", 2 * i - 1);
        1
    } else {
        w
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    /// in x out.
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub bn_scale: Vec<f64>,
    pub bn_shift: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    /// Input normalization learned during training.
    pub normalizer: Normalizer,
    pub blocks: Vec<Block>,
    /// last width x classes.
    pub out_weights: Matrix,
    pub out_bias: Vec<f64>,
    pub dropout: f64,
    pub input_dim: usize,
    pub num_classes: usize,
}

/// He-initialized dense layers, unit batch-norm scale, and a zero output
/// layer, so an untrained model scores every class `1 / C`.
pub fn build_mlp(config: &MlpConfig, input_dim: usize, num_classes: usize) -> Result<MlpModel> {
    config.validate()?;
    if input_dim == 0 || num_classes < 2 {
        return Err(Error::Config("MLP needs input_dim >= 1 and at least 2 classes".into()));
    }
    let widths: Vec<usize> = (1..=config.num_blocks).map(|i| block_width(config.num_neurons_base, i)).collect();
    Ok(init_model(&widths, input_dim, num_classes, config.dropout, config.seed))
}

fn init_model(widths: &[usize], input_dim: usize, num_classes: usize, dropout: f64, seed: u64) -> MlpModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fan_in = input_dim;
    let mut blocks = Vec::with_capacity(widths.len());
    for &w in widths {
        let nrm = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        let data = (0..fan_in * w).map(|_| nrm.sample(&mut rng)).collect();
        blocks.push(Block {
            weights: Matrix::from_vec(fan_in, w, data).expect("sized"),
            bias: vec![0.0; w],
            bn_scale: vec![1.0; w],
            bn_shift: vec![0.0; w],
            running_mean: vec![0.0; w],
            running_var: vec![1.0; w],
        });
        fan_in = w;
    }
    MlpModel {
        normalizer: Normalizer::fit(Normalization::None, &Matrix::zeros(0, 0)),
        blocks,
        out_weights: Matrix::zeros(fan_in, num_classes),
        out_bias: vec![0.0; num_classes],
        dropout,
        input_dim,
        num_classes,
    }
}

fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    let (n, k, m) = (a.rows(), a.cols(), b.cols());
    let mut out = Matrix::zeros(n, m);
    for i in 0..n {
        let ar = a.row(i);
        let or = out.row_mut(i);
        for (p, &av) in ar.iter().enumerate().take(k) {
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in or.iter_mut().zip(b.row(p)) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `a' b`.
fn matmul_tn(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(a.cols(), b.cols());
    for i in 0..a.rows() {
        let br = b.row(i);
        for (p, &av) in a.row(i).iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in out.row_mut(p).iter_mut().zip(br) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `a b'`.
fn matmul_nt(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(a.rows(), b.rows());
    for i in 0..a.rows() {
        for j in 0..b.rows() {
            let v = a.row(i).iter().zip(b.row(j)).map(|(x, y)| x * y).sum();
            out.set(i, j, v);
        }
    }
    out
}

fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut p = logits.clone();
    for r in 0..p.rows() {
        let row = p.row_mut(r);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
    p
}

struct BlockCache {
    input: Matrix,
    xhat: Matrix,
    inv_std: Vec<f64>,
    mean: Vec<f64>,
    var: Vec<f64>,
    /// Post-ReLU output.
    output: Matrix,
}

struct ForwardPass {
    blocks: Vec<BlockCache>,
    dropout_mask: Option<Matrix>,
    hidden: Matrix,
    probs: Matrix,
}

#[derive(Clone)]
struct Grads {
    w: Vec<Matrix>,
    b: Vec<Vec<f64>>,
    scale: Vec<Vec<f64>>,
    shift: Vec<Vec<f64>>,
    out_w: Matrix,
    out_b: Vec<f64>,
}

impl MlpModel {
    pub fn widths(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.bias.len()).collect()
    }

    pub fn num_parameters(&self) -> usize {
        let blocks: usize = self.blocks.iter().map(|b| b.weights.as_slice().len() + 3 * b.bias.len()).sum();
        blocks + self.out_weights.as_slice().len() + self.out_bias.len()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().all(|b| {
            b.weights.is_finite() && b.bias.iter().chain(&b.bn_scale).chain(&b.bn_shift).all(|v| v.is_finite())
        }) && self.out_weights.is_finite()
            && self.out_bias.iter().all(|v| v.is_finite())
    }

    /// Inference on already-normalized inputs: running statistics, no dropout.
    fn infer(&self, x: &Matrix) -> Matrix {
        let mut h = x.clone();
        for b in &self.blocks {
            let mut z = matmul(&h, &b.weights);
            for r in 0..z.rows() {
                for (j, v) in z.row_mut(r).iter_mut().enumerate() {
                    let xh = (*v + b.bias[j] - b.running_mean[j]) / (b.running_var[j] + BN_EPS).sqrt();
                    *v = (b.bn_scale[j] * xh + b.bn_shift[j]).max(0.0);
                }
            }
            h = z;
        }
        let mut logits = matmul(&h, &self.out_weights);
        for r in 0..logits.rows() {
            logits.row_mut(r).iter_mut().zip(&self.out_bias).for_each(|(v, b)| *v += b);
        }
        softmax_rows(&logits)
    }

    fn check_width(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim {
            return Err(Error::dim(self.input_dim, x.cols()));
        }
        Ok(())
    }

    /// Softmax class probabilities per row.
    pub fn score(&self, x: &Matrix) -> Result<Matrix> {
        self.check_width(x)?;
        Ok(self.infer(&self.normalizer.apply(x)?))
    }

    pub fn score_row(&self, x: &[f64]) -> Result<Vec<f64>> {
        let m = Matrix::from_vec(1, x.len(), x.to_vec())?;
        Ok(self.score(&m)?.row(0).to_vec())
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        let p = self.score(x)?;
        Ok(p.iter_rows().map(argmax).collect())
    }

    /// Training-mode forward pass (batch statistics, optional dropout mask).
    fn forward_train(&self, x: &Matrix, rng: Option<&mut ChaCha8Rng>) -> ForwardPass {
        let n = x.rows() as f64;
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut h = x.clone();
        for b in &self.blocks {
            let mut z = matmul(&h, &b.weights);
            let w = z.cols();
            let mut mean = vec![0.0; w];
            for r in 0..z.rows() {
                for (j, v) in z.row_mut(r).iter_mut().enumerate() {
                    *v += b.bias[j];
                    mean[j] += *v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= n);
            let mut var = vec![0.0; w];
            for r in z.iter_rows() {
                for j in 0..w {
                    var[j] += (r[j] - mean[j]).powi(2);
                }
            }
            var.iter_mut().for_each(|v| *v /= n);
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
            let mut xhat = z;
            let mut out = Matrix::zeros(xhat.rows(), w);
            for r in 0..xhat.rows() {
                let xr = xhat.row_mut(r);
                for j in 0..w {
                    xr[j] = (xr[j] - mean[j]) * inv_std[j];
                }
                let xr = xhat.row(r).to_vec();
                for (j, o) in out.row_mut(r).iter_mut().enumerate() {
                    *o = (b.bn_scale[j] * xr[j] + b.bn_shift[j]).max(0.0);
                }
            }
            caches.push(BlockCache { input: h, xhat, inv_std, mean, var, output: out.clone() });
            h = out;
        }
        let mut dropout_mask = None;
        if let Some(rng) = rng {
            if self.dropout > 0.0 {
                let keep = 1.0 - self.dropout;
                let mut mask = Matrix::zeros(h.rows(), h.cols());
                for v in mask.as_mut_slice() {
                    *v = if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 };
                }
                for (hv, m) in h.as_mut_slice().iter_mut().zip(mask.as_slice()) {
                    *hv *= m;
                }
                dropout_mask = Some(mask);
            }
        }
        let mut logits = matmul(&h, &self.out_weights);
        for r in 0..logits.rows() {
            logits.row_mut(r).iter_mut().zip(&self.out_bias).for_each(|(v, b)| *v += b);
        }
        ForwardPass { blocks: caches, dropout_mask, hidden: h, probs: softmax_rows(&logits) }
    }

    fn l2_penalty(&self, l2: f64) -> f64 {
        let sq = |m: &Matrix| m.as_slice().iter().map(|v| v * v).sum::<f64>();
        l2 * (self.blocks.iter().map(|b| sq(&b.weights)).sum::<f64>() + sq(&self.out_weights))
    }

    fn loss_of(&self, pass: &ForwardPass, y: &[usize], l2: f64) -> f64 {
        let ce: f64 = y.iter().enumerate().map(|(i, &c)| -(pass.probs.get(i, c).max(1e-300)).ln()).sum::<f64>();
        ce / y.len() as f64 + self.l2_penalty(l2)
    }

    fn backward(&self, pass: &ForwardPass, y: &[usize], l2: f64) -> Grads {
        let n = y.len() as f64;
        let mut d = pass.probs.clone();
        for (i, &c) in y.iter().enumerate() {
            let v = d.get(i, c);
            d.set(i, c, v - 1.0);
        }
        d.as_mut_slice().iter_mut().for_each(|v| *v /= n);
        let mut out_w = matmul_tn(&pass.hidden, &d);
        for (g, w) in out_w.as_mut_slice().iter_mut().zip(self.out_weights.as_slice()) {
            *g += 2.0 * l2 * w;
        }
        let out_b: Vec<f64> = (0..d.cols()).map(|j| (0..d.rows()).map(|i| d.get(i, j)).sum()).collect();
        let mut dh = matmul_nt(&d, &self.out_weights);
        if let Some(mask) = &pass.dropout_mask {
            for (g, m) in dh.as_mut_slice().iter_mut().zip(mask.as_slice()) {
                *g *= m;
            }
        }
        let nb = self.blocks.len();
        let mut gw = vec![Matrix::zeros(0, 0); nb];
        let mut gb = vec![vec![]; nb];
        let mut gs = vec![vec![]; nb];
        let mut gt = vec![vec![]; nb];
        for bi in (0..nb).rev() {
            let (b, c) = (&self.blocks[bi], &pass.blocks[bi]);
            let w = b.bias.len();
            // ReLU
            for (g, o) in dh.as_mut_slice().iter_mut().zip(c.output.as_slice()) {
                if *o <= 0.0 {
                    *g = 0.0;
                }
            }
            let mut dscale = vec![0.0; w];
            let mut dshift = vec![0.0; w];
            let mut dxhat = dh.clone();
            for r in 0..dh.rows() {
                let (gr, xr) = (dh.row(r), c.xhat.row(r));
                for j in 0..w {
                    dscale[j] += gr[j] * xr[j];
                    dshift[j] += gr[j];
                }
                dxhat.row_mut(r).iter_mut().zip(&b.bn_scale).for_each(|(v, s)| *v *= s);
            }
            let mut sum_dx = vec![0.0; w];
            let mut sum_dx_xhat = vec![0.0; w];
            for r in 0..dxhat.rows() {
                for j in 0..w {
                    sum_dx[j] += dxhat.get(r, j);
                    sum_dx_xhat[j] += dxhat.get(r, j) * c.xhat.get(r, j);
                }
            }
            let mut dz = dxhat;
            for r in 0..dz.rows() {
                let xr = c.xhat.row(r).to_vec();
                for (j, v) in dz.row_mut(r).iter_mut().enumerate() {
                    *v = c.inv_std[j] / n * (n * *v - sum_dx[j] - xr[j] * sum_dx_xhat[j]);
                }
            }
            let mut dw = matmul_tn(&c.input, &dz);
            for (g, wv) in dw.as_mut_slice().iter_mut().zip(b.weights.as_slice()) {
                *g += 2.0 * l2 * wv;
            }
            gb[bi] = (0..w).map(|j| (0..dz.rows()).map(|r| dz.get(r, j)).sum()).collect();
            gw[bi] = dw;
            gs[bi] = dscale;
            gt[bi] = dshift;
            if bi > 0 {
                dh = matmul_nt(&dz, &b.weights);
            }
        }
        Grads { w: gw, b: gb, scale: gs, shift: gt, out_w, out_b }
    }

    fn update_running_stats(&mut self, pass: &ForwardPass) {
        for (b, c) in self.blocks.iter_mut().zip(&pass.blocks) {
            for j in 0..b.bias.len() {
                b.running_mean[j] = BN_MOMENTUM * b.running_mean[j] + (1.0 - BN_MOMENTUM) * c.mean[j];
                b.running_var[j] = BN_MOMENTUM * b.running_var[j] + (1.0 - BN_MOMENTUM) * c.var[j];
            }
        }
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = Vec::new();
        for b in &mut self.blocks {
            v.push(b.weights.as_mut_slice());
            v.push(&mut b.bias);
            v.push(&mut b.bn_scale);
            v.push(&mut b.bn_shift);
        }
        v.push(self.out_weights.as_mut_slice());
        v.push(&mut self.out_bias);
        v
    }
}

impl Grads {
    fn slices(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = Vec::new();
        for i in 0..self.w.len() {
            v.push(self.w[i].as_slice());
            v.push(&self.b[i]);
            v.push(&self.scale[i]);
            v.push(&self.shift[i]);
        }
        v.push(self.out_w.as_slice());
        v.push(&self.out_b);
        v
    }
}

fn argmax(row: &[f64]) -> usize {
    (0..row.len()).fold(0, |b, c| if row[c] > row[b] { c } else { b })
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    fn new(model: &mut MlpModel) -> Self {
        let shapes: Vec<usize> = model.params_mut().iter().map(|p| p.len()).collect();
        Self {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    fn step(&mut self, model: &mut MlpModel, grads: &Grads, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t);
        for (k, (p, g)) in model.params_mut().into_iter().zip(grads.slices()).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    EarlyStop,
    TimeLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub model: MlpModel,
    pub curve: Vec<EpochRecord>,
    /// Epoch of the returned snapshot.
    pub best_epoch: usize,
    pub best_val_loss: Option<f64>,
    pub stop: StopReason,
}

impl TrainOutcome {
    /// Writes the training curve as CSV.
    pub fn write_curve_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "learning_rate", "train_loss", "val_loss", "val_accuracy"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.curve {
            w.write_record([
                r.epoch.to_string(),
                r.learning_rate.to_string(),
                r.train_loss.to_string(),
                opt(r.val_loss),
                opt(r.val_accuracy),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Splits off a stratified validation subset of about `fraction * n`.
fn validation_split(y: &[usize], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let all: Vec<usize> = (0..y.len()).collect();
    if fraction <= 0.0 {
        return (all, vec![]);
    }
    let k = (1.0 / fraction).round() as usize;
    if k < 2 || y.len() < k {
        return (all, vec![]);
    }
    match make_stratified_kfold(y, k, seed) {
        Ok(plan) => {
            let f = plan.folds.into_iter().next().expect("k >= 2 folds");
            (f.train, f.test)
        }
        Err(_) => (all, vec![]),
    }
}

fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    // a one-row batch has no batch-norm variance; fold it into its predecessor
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let n = out.len();
        let start = (n - 1) * size;
        out[n - 1] = &order[start..];
    }
    out
}

/// Trains `model` (as produced by [`build_mlp`]) and returns the snapshot
/// with the lowest validation loss; without a validation split the last
/// epoch is returned.
pub fn train_mlp(model: MlpModel, x: &Matrix, y: &[usize], config: &MlpConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if x.rows() != y.len() {
        return Err(Error::dim(x.rows(), y.len()));
    }
    if x.cols() != model.input_dim {
        return Err(Error::dim(model.input_dim, x.cols()));
    }
    if let Some(&bad) = y.iter().find(|&&c| c >= model.num_classes) {
        return Err(Error::Validation(format!("label {bad} >= class count {}", model.num_classes)));
    }
    let started = Instant::now();
    let (train_idx, val_idx) = validation_split(y, config.validation_fraction, config.seed);
    if train_idx.len() < 2 {
        return Err(Error::Training("MLP needs at least 2 training observations".into()));
    }
    let mut model = model;
    model.dropout = config.dropout;
    model.normalizer = Normalizer::fit(config.normalization, &x.select_rows(&train_idx));
    let xn = model.normalizer.apply(x)?;
    let xtr = xn.select_rows(&train_idx);
    let ytr: Vec<usize> = train_idx.iter().map(|&i| y[i]).collect();
    let xval = xn.select_rows(&val_idx);
    let yval: Vec<usize> = val_idx.iter().map(|&i| y[i]).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut adam = Adam::new(&mut model);
    let bs = config.minibatch.min(ytr.len());
    let mut order: Vec<usize> = (0..ytr.len()).collect();
    let mut curve = Vec::new();
    let mut best: Option<(f64, usize, MlpModel)> = None;
    let mut since_best = 0;
    let mut stop = StopReason::MaxEpochs;

    'epochs: for epoch in 0..config.max_epochs {
        let lr = config.learning_rate(epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for batch in batches(&order, bs) {
            let xb = xtr.select_rows(batch);
            let yb: Vec<usize> = batch.iter().map(|&i| ytr[i]).collect();
            let pass = model.forward_train(&xb, Some(&mut rng));
            let loss = model.loss_of(&pass, &yb, config.l2);
            if !loss.is_finite() {
                return Err(Error::Training(format!("loss diverged (non-finite) at epoch {epoch}")));
            }
            loss_sum += loss * yb.len() as f64;
            seen += yb.len();
            let grads = model.backward(&pass, &yb, config.l2);
            adam.step(&mut model, &grads, lr);
            model.update_running_stats(&pass);
            if started.elapsed().as_secs_f64() > config.train_time_limit_s {
                stop = StopReason::TimeLimit;
                curve.push(EpochRecord { epoch, learning_rate: lr, train_loss: loss_sum / seen as f64, val_loss: None, val_accuracy: None });
                break 'epochs;
            }
        }
        let (val_loss, val_accuracy) = if yval.is_empty() {
            (None, None)
        } else {
            let p = model.infer(&xval);
            let ce = yval.iter().enumerate().map(|(i, &c)| -(p.get(i, c).max(1e-300)).ln()).sum::<f64>() / yval.len() as f64;
            let acc = yval.iter().enumerate().filter(|(i, &c)| argmax(p.row(*i)) == c).count() as f64 / yval.len() as f64;
            (Some(ce), Some(acc))
        };
        curve.push(EpochRecord { epoch, learning_rate: lr, train_loss: loss_sum / seen as f64, val_loss, val_accuracy });
        if let Some(vl) = val_loss {
            if best.as_ref().is_none_or(|(b, _, _)| vl < *b) {
                best = Some((vl, epoch, model.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= config.early_stop_patience {
                    stop = StopReason::EarlyStop;
                    break;
                }
            }
        }
    }
    let last_epoch = curve.last().map_or(0, |r| r.epoch);
    let (model, best_epoch, best_val_loss) = match best {
        Some((vl, e, m)) => (m, e, Some(vl)),
        None => (model, last_epoch, None),
    };
    if !model.is_finite() {
        return Err(Error::Training("parameters became non-finite".into()));
    }
    Ok(TrainOutcome { model, curve, best_epoch, best_val_loss, stop })
}

/// Builds and trains in one step.
pub fn fit_mlp(x: &Matrix, y: &[usize], num_classes: usize, config: &MlpConfig) -> Result<TrainOutcome> {
    let model = build_mlp(config, x.cols(), num_classes)?;
    train_mlp(model, x, y, config)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpCvResult {
    pub config: MlpConfig,
    pub per_fold_accuracy: Vec<f64>,
    pub mean_accuracy: f64,
    pub best_epochs: Vec<usize>,
    pub stops: Vec<StopReason>,
    pub failures: Vec<String>,
}

/// Outer cross-validation of the MLP; folds train concurrently.
pub fn evaluate_mlp(x: &Matrix, y: &[usize], num_classes: usize, plan: &FoldPlan, config: &MlpConfig) -> MlpCvResult {
    use rayon::prelude::*;
    let per: Vec<(f64, usize, Option<StopReason>, Option<String>)> = plan
        .folds
        .par_iter()
        .enumerate()
        .map(|(f, fold)| {
            let ytr: Vec<usize> = fold.train.iter().map(|&i| y[i]).collect();
            let cfg = MlpConfig { seed: config.seed.wrapping_add(f as u64), ..config.clone() };
            let out = fit_mlp(&x.select_rows(&fold.train), &ytr, num_classes, &cfg).and_then(|o| {
                let preds = o.model.predict(&x.select_rows(&fold.test))?;
                let correct = fold.test.iter().zip(&preds).filter(|(&i, &p)| y[i] == p).count();
                Ok((correct as f64 / fold.test.len().max(1) as f64, o.best_epoch, o.stop))
            });
            match out {
                Ok((a, e, s)) => (a, e, Some(s), None),
                Err(e) => (0.0, 0, None, Some(format!("fold {f}: {e}"))),
            }
        })
        .collect();
    let per_fold_accuracy: Vec<f64> = per.iter().map(|p| p.0).collect();
    MlpCvResult {
        config: config.clone(),
        mean_accuracy: per_fold_accuracy.iter().sum::<f64>() / per_fold_accuracy.len().max(1) as f64,
        per_fold_accuracy,
        best_epochs: per.iter().map(|p| p.1).collect(),
        stops: per.iter().filter_map(|p| p.2).collect(),
        failures: per.into_iter().filter_map(|p| p.3).collect(),
    }
}

pub const MAX_SEARCH_TRIALS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub config: MlpConfig,
    pub val_accuracy: f64,
    pub val_loss: f64,
}

/// Random search over block count, base width and normalization, scored by
/// the best validation loss of each trial (ties to the earlier trial).
/// Returns every trial and the index of the best.
pub fn random_search(
    x: &Matrix,
    y: &[usize],
    num_classes: usize,
    base: &MlpConfig,
    trials: usize,
    seed: u64,
) -> Result<(Vec<TrialResult>, usize)> {
    if trials == 0 || trials > MAX_SEARCH_TRIALS {
        return Err(Error::Config(format!("trials must be in 1..={MAX_SEARCH_TRIALS}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let norms = [
        Normalization::None,
        Normalization::Zscore(NormDim::Element),
        Normalization::Zscore(NormDim::All),
    ];
    let mut results = Vec::with_capacity(trials);
    for t in 0..trials {
        let cfg = MlpConfig {
            num_blocks: rng.random_range(3..=10),
            num_neurons_base: (10f64 * 50f64.powf(rng.random::<f64>())).round().clamp(10.0, 500.0) as usize,
            normalization: norms[rng.random_range(0..norms.len())],
            seed: base.seed.wrapping_add(t as u64),
            ..base.clone()
        };
        let out = fit_mlp(x, y, num_classes, &cfg)?;
        let rec = &out.curve[out.best_epoch.min(out.curve.len() - 1)];
        let rec = out.curve.iter().find(|r| r.epoch == out.best_epoch).unwrap_or(rec);
        results.push(TrialResult {
            config: cfg,
            val_accuracy: rec.val_accuracy.unwrap_or(0.0),
            val_loss: out.best_val_loss.unwrap_or(f64::INFINITY),
        });
    }
    let best = (0..results.len())
        .fold(0, |b, i| if results[i].val_loss < results[b].val_loss { i } else { b });
    Ok((results, best))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    pub parameters_checked: usize,
}

/// Compares backpropagated gradients with central differences of the
/// training-mode loss (full batch, no dropout). Relative errors use
/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn gradient_check(model: &MlpModel, x: &Matrix, y: &[usize], l2: f64, h: f64) -> Result<GradientCheck> {
    if x.cols() != model.input_dim || x.rows() != y.len() {
        return Err(Error::dim(model.input_dim, x.cols()));
    }
    let mut m = model.clone();
    m.dropout = 0.0;
    let pass = m.forward_train(x, None);
    let grads = m.backward(&pass, y, l2);
    let analytic: Vec<Vec<f64>> = grads.slices().into_iter().map(|s| s.to_vec()).collect();
    let mut worst = 0.0f64;
    let mut count = 0;
    for (k, g) in analytic.iter().enumerate() {
        for i in 0..g.len() {
            let orig = m.params_mut()[k][i];
            m.params_mut()[k][i] = orig + h;
            let lp = m.loss_of(&m.forward_train(x, None), y, l2);
            m.params_mut()[k][i] = orig - h;
            let lm = m.loss_of(&m.forward_train(x, None), y, l2);
            m.params_mut()[k][i] = orig;
            let num = (lp - lm) / (2.0 * h);
            let rel = (g[i] - num).abs() / g[i].abs().max(num.abs()).max(1e-6);
            worst = worst.max(rel);
            count += 1;
        }
    }
    Ok(GradientCheck { max_relative_error: worst, parameters_checked: count })
}

/// A model with explicit block widths (outside the configured range) for
/// small-scale checks.
pub fn build_with_widths(widths: &[usize], input_dim: usize, num_classes: usize, seed: u64) -> MlpModel {
    init_model(widths, input_dim, num_classes, 0.0, seed)
}

/// Replaces the zero output layer with He-initialized weights.
pub fn randomize_output(model: &mut MlpModel, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nrm = Normal::new(0.0, (2.0 / model.out_weights.rows() as f64).sqrt()).expect("positive std");
    model.out_weights.as_mut_slice().iter_mut().for_each(|v| *v = nrm.sample(&mut rng));
    model.out_bias.iter_mut().for_each(|v| *v = 0.1 * nrm.sample(&mut rng));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn widths_follow_formula() {
        assert_eq!(block_width(300, 1), 300);
        assert_eq!(block_width(300, 2), 100);
        assert_eq!(block_width(10, 10), 1);
        let m = build_mlp(&MlpConfig { num_neurons_base: 300, num_blocks: 5, ..Default::default() }, 8, 3).unwrap();
        let w = m.widths();
        assert_eq!(w, vec![300, 100, 60, 42, 33]);
        assert!(w.windows(2).all(|p| p[0] >= p[1]));
    }

    #[test]
    fn untrained_scores_are_uniform() {
        let m = build_mlp(&MlpConfig::default(), 5, 4).unwrap();
        let s = m.score(&Matrix::from_rows(&[vec![1.0, -2.0, 0.5, 3.0, 0.0]]).unwrap()).unwrap();
        assert!(s.row(0).iter().all(|&p| (p - 0.25).abs() < 1e-12));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..10).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let y: Vec<usize> = (0..10).map(|i| i % 3).collect();
        let mut m = build_with_widths(&[6, 5, 4], 4, 3, 11);
        randomize_output(&mut m, 12);
        let g = gradient_check(&m, &x, &y, 1e-2, 1e-5).unwrap();
        assert_eq!(g.parameters_checked, m.num_parameters());
        assert!(g.max_relative_error < 1e-4, "{g:?}");
    }

    #[test]
    fn batches_never_leave_a_singleton() {
        let order: Vec<usize> = (0..129).collect();
        let b = batches(&order, 64);
        assert_eq!(b.iter().map(|c| c.len()).collect::<Vec<_>>(), vec![64, 65]);
        assert_eq!(batches(&order[..64], 64).len(), 1);
    }

    #[test]
    fn learning_rate_schedule() {
        let c = MlpConfig::default();
        assert_eq!(c.learning_rate(19), 0.004);
        assert!((c.learning_rate(20) - 0.0032).abs() < 1e-15);
        assert!((c.learning_rate(45) - 0.004 * 0.64).abs() < 1e-15);
    }

    #[test]
    fn separable_training_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let y: Vec<usize> = (0..120).map(|i| i % 2).collect();
        let rows: Vec<Vec<f64>> = y
            .iter()
            .map(|&c| (0..6).map(|j| if j == 0 { 2.0 * c as f64 - 1.0 } else { 0.0 } + 0.3 * rng.random_range(-1.0..1.0)).collect())
            .collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let cfg = MlpConfig { max_epochs: 30, num_neurons_base: 20, ..Default::default() };
        let a = fit_mlp(&x, &y, 2, &cfg).unwrap();
        let b = fit_mlp(&x, &y, 2, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        let pred = a.model.predict(&x).unwrap();
        let acc = pred.iter().zip(&y).filter(|(p, t)| p == t).count() as f64 / 120.0;
        assert!(acc >= 0.95, "{acc}");
        let s = a.model.score(&x).unwrap();
        assert!(s.iter_rows().all(|r| (r.iter().sum::<f64>() - 1.0).abs() < 1e-9));
    }
}
